//! Topological zone graphs from egocentric video.
//!
//! The pipeline turns per-frame embeddings and interaction annotations into
//! per-video zone graphs ([`topo`]), links zones across videos and
//! environments by the actions performed in them ([`linker`]), and trains
//! two heads on top: zone affordance prediction ([`affordance`]) and
//! long-horizon action anticipation with a graph convolution
//! ([`anticipation`]). [`synth`] generates environments with known ground
//! truth for every stage.

pub mod affordance;
pub mod anticipation;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod kmeans;
pub mod linker;
pub mod metrics;
pub mod nn;
pub mod pairgen;
pub mod par;
pub mod simnet;
pub mod synth;
pub mod topo;

pub use error::{Error, ErrorKind, Result};
pub use par::Exec;
