//! Zone affordance learning.
//!
//! Every visit to a zone is a training sample: its center frame, labelled
//! with every interaction observed anywhere in the zone. How "the zone" is
//! delimited is what distinguishes the variants: one video's graph node
//! (`S`), a node of the combined map of a kitchen (`M`), or a cluster of the
//! consolidated map across kitchens (`C`). Two baselines use the same
//! classifier: single-label clips (`ClipAction`) and k-means clusters of raw
//! frames (`KMeans`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{ClipAnnotation, Dataset, InteractionVocab, Split};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest};
use crate::linker::{link_nodes, overlapping_clips, ConsolidatedGraph, LinkConfig};
use crate::metrics::{eval_map, EvalSplit, MapReport};
use crate::nn::{bce_grad, bce_with_logits, sigmoid, train_loop, Mlp, Optim, StepLr};
use crate::par::{rng_stream, Exec};
use crate::topo::{TopoGraph, Visit};

pub const CHECKPOINT_KIND: &str = "affordance";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    NodeLevel,
    ClipLevel,
}

/// Multi-label target. Entries outside `mask` are not supervised and are
/// always negative in `y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffordanceTargets {
    pub y: Vec<bool>,
    pub mask: Vec<bool>,
    pub source: TargetSource,
}

impl AffordanceTargets {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.y.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }

    pub fn is_consistent(&self) -> bool {
        self.y.len() == self.mask.len() && self.y.iter().zip(&self.mask).all(|(&y, &m)| !y || m)
    }
}

/// Union of the interactions of every clip overlapping any of `visits`.
pub fn node_affordance_labels(
    visits: &[(String, Visit)],
    anns: &[ClipAnnotation],
    vocab: &InteractionVocab,
) -> AffordanceTargets {
    let mut y = vec![false; vocab.num_interactions()];
    for c in overlapping_clips(visits, anns) {
        if let Some(k) = vocab.interaction_of(c) {
            y[k] = true;
        }
    }
    AffordanceTargets {
        mask: vec![true; y.len()],
        y,
        source: TargetSource::NodeLevel,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "s")]
    S,
    #[serde(rename = "m")]
    M,
    #[serde(rename = "c")]
    C,
    #[serde(rename = "clip_action")]
    ClipAction,
    #[serde(rename = "kmeans")]
    KMeans,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::S, Variant::M, Variant::C, Variant::ClipAction, Variant::KMeans];

    pub fn name(self) -> &'static str {
        match self {
            Variant::S => "s",
            Variant::M => "m",
            Variant::C => "c",
            Variant::ClipAction => "clip_action",
            Variant::KMeans => "kmeans",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown affordance variant {s:?} (s, m, c, clip_action, kmeans)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceSample {
    pub sample_id: String,
    pub video_id: String,
    pub frame: usize,
    pub targets: AffordanceTargets,
}

/// Zones as groups of visits; one sample per visit at its center frame.
pub fn samples_from_groups(groups: &[Vec<(String, Visit)>], ds: &Dataset, tag: &str) -> Vec<AffordanceSample> {
    let mut out = Vec::new();
    for (g, visits) in groups.iter().enumerate() {
        let targets = node_affordance_labels(visits, &ds.annotations, &ds.vocab);
        for (i, (vid, v)) in visits.iter().enumerate() {
            out.push(AffordanceSample {
                sample_id: format!("{tag}{g}/{i}"),
                video_id: vid.clone(),
                frame: v.center(),
                targets: targets.clone(),
            });
        }
    }
    out
}

pub fn node_groups(graphs: &[TopoGraph]) -> Vec<Vec<(String, Visit)>> {
    graphs
        .iter()
        .flat_map(|g| {
            g.nodes
                .iter()
                .map(move |n| n.visits.iter().map(|v| (g.video_id.clone(), *v)).collect())
        })
        .collect()
}

pub fn cluster_groups(cg: &ConsolidatedGraph) -> Vec<Vec<(String, Visit)>> {
    cg.clusters.iter().map(|c| c.visits.clone()).collect()
}

/// One single-label sample per clip, supervised on its own interaction only.
pub fn clip_action_samples(ds: &Dataset, videos: &[String]) -> Vec<AffordanceSample> {
    let a = ds.vocab.num_interactions();
    let keep: std::collections::BTreeSet<&str> = videos.iter().map(String::as_str).collect();
    let mut clips: Vec<&ClipAnnotation> = ds
        .annotations
        .iter()
        .filter(|c| keep.contains(c.video_id.as_str()))
        .collect();
    clips.sort_by(|x, y| (&x.video_id, x.start_frame, x.stop_frame).cmp(&(&y.video_id, y.start_frame, y.stop_frame)));
    clips
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let k = ds.vocab.interaction_of(c)?;
            let mut y = vec![false; a];
            y[k] = true;
            Some(AffordanceSample {
                sample_id: format!("clip{i}"),
                video_id: c.video_id.clone(),
                frame: c.center_frame(),
                targets: AffordanceTargets {
                    mask: y.clone(),
                    y,
                    source: TargetSource::ClipLevel,
                },
            })
        })
        .collect()
}

/// k-means over every frame of `videos`; each maximal run of frames in one
/// cluster becomes a visit of that cluster.
pub fn kmeans_groups(ds: &Dataset, videos: &[String], k: usize, seed: u64, exec: Exec) -> Result<Vec<Vec<(String, Visit)>>> {
    let mut points = Vec::new();
    for id in videos {
        let m = ds.video(id)?;
        points.extend((0..m.num_frames()).map(|t| m.row(t).iter().map(|&x| x as f64).collect::<Vec<f64>>()));
    }
    let km = kmeans(&points, k.min(points.len()).max(1), 100, seed, exec)?;
    let mut groups = vec![Vec::new(); km.centroids.len()];
    let mut offset = 0;
    for id in videos {
        let n = ds.video(id)?.num_frames();
        let labels: Vec<usize> = points[offset..offset + n].iter().map(|p| nearest(&km.centroids, p)).collect();
        offset += n;
        let mut start = 0;
        for t in 1..=n {
            if t == n || labels[t] != labels[start] {
                groups[labels[start]].push((
                    id.clone(),
                    Visit {
                        start_frame: start,
                        stop_frame: t - 1,
                    },
                ));
                start = t;
            }
        }
    }
    groups.retain(|g| !g.is_empty());
    Ok(groups)
}

/// Inputs each variant draws on.
pub enum TrainingSource<'a> {
    /// Per-video graphs (`S`).
    Graphs(&'a [TopoGraph]),
    /// Combined map of each kitchen (`M`).
    Combined(&'a [ConsolidatedGraph]),
    /// Consolidated map across kitchens (`C`).
    Consolidated(&'a ConsolidatedGraph),
    /// Clips of these videos (`ClipAction`).
    Clips(&'a [String]),
    /// Frames of these videos, clustered into `k` groups (`KMeans`).
    Frames { videos: &'a [String], k: usize, seed: u64 },
}

impl TrainingSource<'_> {
    pub fn variant(&self) -> Variant {
        match self {
            TrainingSource::Graphs(_) => Variant::S,
            TrainingSource::Combined(_) => Variant::M,
            TrainingSource::Consolidated(_) => Variant::C,
            TrainingSource::Clips(_) => Variant::ClipAction,
            TrainingSource::Frames { .. } => Variant::KMeans,
        }
    }
}

pub fn build_affordance_training_set(source: &TrainingSource<'_>, ds: &Dataset, exec: Exec) -> Result<Vec<AffordanceSample>> {
    Ok(match source {
        TrainingSource::Graphs(g) => samples_from_groups(&node_groups(g), ds, "node"),
        TrainingSource::Combined(cgs) => {
            let groups: Vec<_> = cgs.iter().flat_map(cluster_groups).collect();
            samples_from_groups(&groups, ds, "combined")
        }
        TrainingSource::Consolidated(cg) => samples_from_groups(&cluster_groups(cg), ds, "cluster"),
        TrainingSource::Clips(videos) => clip_action_samples(ds, videos),
        TrainingSource::Frames { videos, k, seed } => {
            samples_from_groups(&kmeans_groups(ds, videos, *k, *seed, exec)?, ds, "kmeans")
        }
    })
}

/// Training set of `variant` from the per-video graphs of the training
/// videos, linking as needed: per kitchen for `M`, across kitchens for `C`.
/// `KMeans` uses as many clusters as the consolidated map has nodes.
pub fn training_set_for(
    variant: Variant,
    graphs: &[TopoGraph],
    ds: &Dataset,
    link: &LinkConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<AffordanceSample>> {
    let (nv, nn) = (ds.vocab.num_verbs(), ds.vocab.num_nouns());
    let videos: Vec<String> = graphs.iter().map(|g| g.video_id.clone()).collect();
    match variant {
        Variant::S => build_affordance_training_set(&TrainingSource::Graphs(graphs), ds, exec),
        Variant::M => {
            let mut by_kitchen: BTreeMap<&str, Vec<TopoGraph>> = BTreeMap::new();
            for g in graphs {
                by_kitchen.entry(ds.kitchen(&g.video_id)).or_default().push(g.clone());
            }
            let combined = by_kitchen
                .values()
                .map(|gs| link_nodes(gs, &ds.annotations, nv, nn, link, exec))
                .collect::<Result<Vec<_>>>()?;
            build_affordance_training_set(&TrainingSource::Combined(&combined), ds, exec)
        }
        Variant::C => {
            let cg = link_nodes(graphs, &ds.annotations, nv, nn, link, exec)?;
            build_affordance_training_set(&TrainingSource::Consolidated(&cg), ds, exec)
        }
        Variant::ClipAction => build_affordance_training_set(&TrainingSource::Clips(&videos), ds, exec),
        Variant::KMeans => {
            let cg = link_nodes(graphs, &ds.annotations, nv, nn, link, exec)?;
            let k = cg.clusters.len();
            build_affordance_training_set(&TrainingSource::Frames { videos: &videos, k, seed }, ds, exec)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffordanceTrainConfig {
    pub hidden: usize,
    pub lr: f64,
    /// Learning rate after `lr_milestone` epochs.
    pub lr_final: f64,
    pub lr_milestone: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AffordanceTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            lr: 1e-4,
            lr_final: 1e-5,
            lr_milestone: 15,
            weight_decay: 1e-6,
            batch_size: 256,
            epochs: 20,
            seed: 0,
        }
    }
}

impl AffordanceTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.epochs == 0 || !(self.lr > 0.0) || !(self.lr_final > 0.0) {
            return Err(Error::Config("affordance training values must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn optim(&self) -> Optim {
        Optim {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: StepLr {
                base: self.lr,
                milestone: self.lr_milestone,
                gamma: self.lr_final / self.lr,
            },
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMeta {
    pub schema_version: u32,
    pub dim: usize,
    pub num_classes: usize,
    pub layer_sizes: Vec<usize>,
    pub variant: Option<Variant>,
    pub train: Option<AffordanceTrainConfig>,
}

/// Two hidden ReLU layers and a linear layer to one logit per interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceModel {
    mlp: Mlp,
    theta: Vec<f64>,
    pub variant: Option<Variant>,
    pub train: Option<AffordanceTrainConfig>,
}

impl AffordanceModel {
    pub fn new(dim: usize, hidden: usize, num_classes: usize, seed: u64) -> Self {
        let mlp = Mlp::new(vec![dim, hidden, hidden, num_classes], false);
        let theta = mlp.init(&mut rng_stream(seed, 0x4146_46));
        Self {
            mlp,
            theta,
            variant: None,
            train: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_params(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.mlp.num_params() {
            return Err(Error::DimMismatch {
                expected: self.mlp.num_params(),
                found: theta.len(),
            });
        }
        self.theta = theta;
        Ok(())
    }

    pub fn logits_with(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        self.mlp.apply(theta, x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.mlp.apply(&self.theta, x).into_iter().map(sigmoid).collect())
    }

    /// Masked BCE summed over supervised entries, with its gradient added
    /// into `grad`. Returns `(loss_sum, supervised_count)`.
    pub fn accumulate(&self, theta: &[f64], x: &[f64], t: &AffordanceTargets, grad: &mut [f64]) -> (f64, f64) {
        let count = t.mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return (0.0, 0.0);
        }
        let tape = self.mlp.forward(theta, x);
        let z = tape.output();
        let mut dout = vec![0.0; z.len()];
        let mut loss = 0.0;
        for k in 0..z.len() {
            if t.mask[k] {
                let y = if t.y[k] { 1.0 } else { 0.0 };
                loss += bce_with_logits(z[k], y);
                dout[k] = bce_grad(z[k], y);
            }
        }
        self.mlp.backward(theta, &tape, &dout, grad);
        (loss, count as f64)
    }

    /// Mean masked BCE over supervised entries of one sample.
    pub fn loss(&self, theta: &[f64], x: &[f64], t: &AffordanceTargets) -> f64 {
        let z = self.mlp.apply(theta, x);
        let (mut loss, mut n) = (0.0, 0.0);
        for k in 0..z.len() {
            if t.mask[k] {
                loss += bce_with_logits(z[k], if t.y[k] { 1.0 } else { 0.0 });
                n += 1.0;
            }
        }
        if n > 0.0 {
            loss / n
        } else {
            0.0
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint<AffordanceMeta> {
        Checkpoint {
            meta: AffordanceMeta {
                schema_version: SCHEMA_VERSION,
                dim: self.dim(),
                num_classes: self.num_classes(),
                layer_sizes: self.mlp.sizes.clone(),
                variant: self.variant,
                train: self.train.clone(),
            },
            params: self.theta.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<AffordanceMeta>) -> Result<Self> {
        let m = ck.meta;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                what: "affordance model".into(),
                expected: SCHEMA_VERSION,
                found: m.schema_version,
            });
        }
        if m.layer_sizes.len() != 4 || m.layer_sizes[0] != m.dim || m.layer_sizes[3] != m.num_classes {
            return Err(Error::parse("affordance checkpoint", "layer sizes do not match dim and classes"));
        }
        let mlp = Mlp::new(m.layer_sizes, false);
        let mut model = Self {
            theta: Vec::new(),
            mlp,
            variant: m.variant,
            train: m.train,
        };
        model.set_params(ck.params)?;
        Ok(model)
    }
}

pub fn sample_feature(ds: &Dataset, video_id: &str, frame: usize) -> Result<Vec<f64>> {
    let m = ds.video(video_id)?;
    if frame >= m.num_frames() {
        return Err(Error::InvalidInput(format!("frame {frame} outside video {video_id}")));
    }
    Ok(m.row(frame).iter().map(|&x| x as f64).collect())
}

pub fn train_affordance(
    samples: &[AffordanceSample],
    ds: &Dataset,
    cfg: &AffordanceTrainConfig,
) -> Result<(AffordanceModel, Vec<f64>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no affordance training samples".into()));
    }
    let a = ds.vocab.num_interactions();
    if let Some(s) = samples.iter().find(|s| s.targets.y.len() != a || !s.targets.is_consistent()) {
        return Err(Error::InvalidInput(format!("malformed targets on sample {}", s.sample_id)));
    }
    if samples.iter().all(|s| !s.targets.mask.contains(&true)) {
        return Err(Error::InvalidInput("every affordance target is fully masked".into()));
    }
    let data: Vec<(Vec<f64>, &AffordanceTargets)> = samples
        .iter()
        .map(|s| Ok((sample_feature(ds, &s.video_id, s.frame)?, &s.targets)))
        .collect::<Result<_>>()?;
    let mut model = AffordanceModel::new(ds.dim(), cfg.hidden, a, cfg.seed);
    let mut theta = model.theta.clone();
    let history = train_loop(&mut theta, &data, &cfg.optim(), |t, (x, y), grad| model.accumulate(t, x, y, grad));
    model.theta = theta;
    model.train = Some(cfg.clone());
    if model.theta.iter().any(|p| !p.is_finite()) {
        return Err(Error::Invariant("affordance training diverged".into()));
    }
    Ok((model, history))
}

/// Clip-level training instances per interaction over `videos`.
pub fn interaction_counts(ds: &Dataset, videos: &[String]) -> Vec<usize> {
    let keep: std::collections::BTreeSet<&str> = videos.iter().map(String::as_str).collect();
    let mut counts = vec![0; ds.vocab.num_interactions()];
    for c in &ds.annotations {
        if keep.contains(c.video_id.as_str()) {
            if let Some(k) = ds.vocab.interaction_of(c) {
                counts[k] += 1;
            }
        }
    }
    counts
}

/// Evaluation frame with the interactions its zone affords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub sample_id: String,
    pub video_id: String,
    pub frame: usize,
    pub afforded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub scores: Vec<f64>,
}

pub fn predict_items(model: &AffordanceModel, items: &[EvalItem], ds: &Dataset, exec: Exec) -> Result<Vec<Prediction>> {
    exec.map(items, |it| {
        Ok(Prediction {
            sample_id: it.sample_id.clone(),
            scores: model.predict(&sample_feature(ds, &it.video_id, it.frame)?)?,
        })
    })
    .into_iter()
    .collect()
}

pub fn evaluate_affordance(
    model: &AffordanceModel,
    items: &[EvalItem],
    ds: &Dataset,
    split: &EvalSplit,
    exec: Exec,
) -> Result<(MapReport, Vec<Prediction>)> {
    let preds = predict_items(model, items, ds, exec)?;
    let a = model.num_classes();
    let gt: Vec<Vec<bool>> = items
        .iter()
        .map(|it| {
            let mut g = vec![false; a];
            for &k in &it.afforded {
                if k < a {
                    g[k] = true;
                }
            }
            g
        })
        .collect();
    let scores: Vec<Vec<f64>> = preds.iter().map(|p| p.scores.clone()).collect();
    Ok((eval_map(&scores, &gt, split, exec)?, preds))
}

/// Evaluation items from test videos when no zone ground truth exists: the
/// center frame of every visit, labelled with the interactions observed in
/// its node.
pub fn observed_eval_items(graphs: &[TopoGraph], ds: &Dataset) -> Vec<EvalItem> {
    samples_from_groups(&node_groups(graphs), ds, "test")
        .into_iter()
        .map(|s| EvalItem {
            afforded: s.targets.positives().collect(),
            sample_id: s.sample_id,
            video_id: s.video_id,
            frame: s.frame,
        })
        .collect()
}

/// Every `stride`-th frame of the test videos, labelled through a
/// frame-to-zone map and per-zone affordance sets.
pub fn zone_eval_items(
    ds: &Dataset,
    frame_zone: &BTreeMap<String, Vec<usize>>,
    zone_affordances: &BTreeMap<usize, Vec<usize>>,
    stride: usize,
) -> Result<Vec<EvalItem>> {
    let mut items = Vec::new();
    for id in ds.video_ids(Split::Test) {
        let zones = frame_zone
            .get(&id)
            .ok_or_else(|| Error::InvalidInput(format!("no zone ground truth for {id}")))?;
        for t in (0..zones.len()).step_by(stride.max(1)) {
            let afforded = zone_affordances
                .get(&zones[t])
                .ok_or_else(|| Error::InvalidInput(format!("no affordances for zone {}", zones[t])))?;
            items.push(EvalItem {
                sample_id: format!("{id}/{t}"),
                video_id: id.clone(),
                frame: t,
                afforded: afforded.clone(),
            });
        }
    }
    Ok(items)
}
