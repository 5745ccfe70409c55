//! Pairwise zone-similarity scorer over precomputed frame embeddings.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{bce_grad, bce_with_logits, sigmoid, train_loop, Mlp, Optim, StepLr};
use crate::pairgen::{cosine, PairLabel, PairSample};
use crate::par::rng_stream;

pub const CHECKPOINT_KIND: &str = "simnet";
pub const SCHEMA_VERSION: u32 = 1;

/// Probability that two frames show the same zone. Implementations must be
/// symmetric in their arguments.
pub trait PairScorer: Sync {
    fn score(&self, a: &[f32], b: &[f32]) -> f64;

    /// Whether callers should memoise scores (one call costs far more than a
    /// hash lookup).
    fn is_expensive(&self) -> bool {
        false
    }
}

/// `[|a - b|, a * b, (a + b) / 2]`: every block is a symmetric function of
/// the pair, so the scorer is symmetric by construction.
pub fn pair_features(a: &[f32], b: &[f32]) -> Vec<f64> {
    let d = a.len();
    let mut out = vec![0.0; 3 * d];
    for i in 0..d {
        let (x, y) = (a[i] as f64, b[i] as f64);
        out[i] = (x - y).abs();
        out[d + i] = x * y;
        out[2 * d + i] = (x + y) * 0.5;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Width of the hidden layers.
    pub hidden: usize,
    /// Number of linear layers, including the scalar output layer.
    pub layers: usize,
}

impl Default for SimTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 20,
            batch_size: 256,
            seed: 0,
            val_fraction: 0.1,
            hidden: 256,
            layers: 5,
        }
    }
}

impl SimTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("similarity training values must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMeta {
    pub schema_version: u32,
    pub dim: usize,
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub train: Option<SimTrainConfig>,
}

/// MLP head over [`pair_features`] ending in a single sigmoid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    dim: usize,
    mlp: Mlp,
    theta: Vec<f64>,
    seed: u64,
    train: Option<SimTrainConfig>,
}

impl SimilarityModel {
    pub fn new(dim: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        let mut sizes = vec![3 * dim];
        sizes.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        sizes.push(1);
        let mlp = Mlp::new(sizes, false);
        let theta = mlp.init(&mut rng_stream(seed, 0x5349_4d));
        Self {
            dim,
            mlp,
            theta,
            seed,
            train: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn logit_with(&self, theta: &[f64], a: &[f32], b: &[f32]) -> f64 {
        self.mlp.apply(theta, &pair_features(a, b))[0]
    }

    pub fn score_pair(&self, a: &[f32], b: &[f32]) -> Result<f64> {
        for v in [a, b] {
            if v.len() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    found: v.len(),
                });
            }
        }
        Ok(sigmoid(self.logit_with(&self.theta, a, b)))
    }

    /// BCE loss of one labelled pair and its gradient at `theta`.
    pub fn loss_and_grad(&self, theta: &[f64], a: &[f32], b: &[f32], similar: bool) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; theta.len()];
        let loss = self.accumulate(theta, a, b, similar, &mut grad);
        (loss, grad)
    }

    fn accumulate(&self, theta: &[f64], a: &[f32], b: &[f32], similar: bool, grad: &mut [f64]) -> f64 {
        let y = if similar { 1.0 } else { 0.0 };
        let tape = self.mlp.forward(theta, &pair_features(a, b));
        let z = tape.output()[0];
        self.mlp.backward(theta, &tape, &[bce_grad(z, y)], grad);
        bce_with_logits(z, y)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<SimilarityMeta> {
        Checkpoint {
            meta: SimilarityMeta {
                schema_version: SCHEMA_VERSION,
                dim: self.dim,
                layer_sizes: self.mlp.sizes.clone(),
                seed: self.seed,
                train: self.train.clone(),
            },
            params: self.theta.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<SimilarityMeta>) -> Result<Self> {
        let m = ck.meta;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                what: "similarity model".into(),
                expected: SCHEMA_VERSION,
                found: m.schema_version,
            });
        }
        if m.layer_sizes.first() != Some(&(3 * m.dim)) || m.layer_sizes.last() != Some(&1) {
            return Err(Error::parse("similarity checkpoint", "layer sizes do not match dim"));
        }
        let mlp = Mlp::new(m.layer_sizes, false);
        let mut model = Self {
            dim: m.dim,
            theta: vec![0.0; mlp.num_params()],
            mlp,
            seed: m.seed,
            train: m.train,
        };
        model.set_params(ck.params)?;
        Ok(model)
    }
}

impl PairScorer for SimilarityModel {
    fn score(&self, a: &[f32], b: &[f32]) -> f64 {
        sigmoid(self.logit_with(&self.theta, a, b))
    }

    fn is_expensive(&self) -> bool {
        true
    }
}

/// Closed-form scorer: `sigmoid(scale * (cos(a, b) - center))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineScorer {
    pub center: f64,
    pub scale: f64,
}

impl Default for CosineScorer {
    fn default() -> Self {
        Self {
            center: 0.5,
            scale: 10.0,
        }
    }
}

impl CosineScorer {
    /// Fit `center` and `scale` by logistic regression of the pair labels on
    /// cosine similarity.
    pub fn calibrate(pairs: &[PairSample], ds: &Dataset) -> Result<Self> {
        let data = labelled_cosines(pairs, ds)?;
        // Newton's method on (w, c) for sigmoid(w * x + c), lightly ridged.
        let (mut w, mut c) = (1.0f64, 0.0f64);
        for _ in 0..100 {
            let (mut gw, mut gc, mut hww, mut hwc, mut hcc) = (0.0, 0.0, 1e-6, 0.0, 1e-6);
            for &(x, y) in &data {
                let p = sigmoid(w * x + c);
                let r = p - y;
                let s = p * (1.0 - p);
                gw += r * x;
                gc += r;
                hww += s * x * x;
                hwc += s * x;
                hcc += s;
            }
            gw += 1e-6 * w;
            gc += 1e-6 * c;
            let det = hww * hcc - hwc * hwc;
            if det.abs() < 1e-300 {
                break;
            }
            let dw = (hcc * gw - hwc * gc) / det;
            let dc = (hww * gc - hwc * gw) / det;
            w -= dw;
            c -= dc;
            if dw.abs() + dc.abs() < 1e-12 {
                break;
            }
        }
        if !(w > 0.0) {
            return Err(Error::InvalidInput("cosine similarity does not separate the pair labels".into()));
        }
        Ok(Self {
            center: -c / w,
            scale: w,
        })
    }
}

fn labelled_cosines(pairs: &[PairSample], ds: &Dataset) -> Result<Vec<(f64, f64)>> {
    check_classes(pairs)?;
    pairs
        .iter()
        .map(|p| {
            let v = ds.video(&p.video_id)?;
            let y = if p.label == PairLabel::Similar { 1.0 } else { 0.0 };
            Ok((cosine(v.row(p.frame_a), v.row(p.frame_b)), y))
        })
        .collect()
}

impl PairScorer for CosineScorer {
    fn score(&self, a: &[f32], b: &[f32]) -> f64 {
        sigmoid(self.scale * (cosine(a, b) - self.center))
    }
}

fn check_classes(pairs: &[PairSample]) -> Result<()> {
    let pos = pairs.iter().filter(|p| p.label == PairLabel::Similar).count();
    if pos == 0 || pos == pairs.len() {
        return Err(Error::InvalidInput(format!(
            "pair set needs both classes ({} similar of {})",
            pos,
            pairs.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrainReport {
    pub epoch_losses: Vec<f64>,
    pub val_accuracy: Option<f64>,
    pub num_train: usize,
    pub num_val: usize,
}

/// Accuracy of thresholding `scorer` at 0.5 over labelled pairs.
pub fn pair_accuracy(scorer: &dyn PairScorer, pairs: &[PairSample], ds: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for p in pairs {
        let v = ds.video(&p.video_id)?;
        let predicted = scorer.score(v.row(p.frame_a), v.row(p.frame_b)) >= 0.5;
        correct += (predicted == (p.label == PairLabel::Similar)) as usize;
    }
    Ok(correct as f64 / pairs.len().max(1) as f64)
}

/// Train the MLP scorer with Adam on binary cross entropy.
pub fn train_similarity(
    pairs: &[PairSample],
    ds: &Dataset,
    cfg: &SimTrainConfig,
) -> Result<(SimilarityModel, SimTrainReport)> {
    cfg.validate()?;
    check_classes(pairs)?;
    for p in pairs {
        let v = ds.video(&p.video_id)?;
        if p.frame_a >= v.num_frames() || p.frame_b >= v.num_frames() {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) outside video {}",
                p.frame_a, p.frame_b, p.video_id
            )));
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng_stream(cfg.seed, 0x5641_4c));
    let n_val = ((pairs.len() as f64) * cfg.val_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train: Vec<&PairSample> = train_idx.iter().map(|&i| &pairs[i]).collect();
    let val: Vec<PairSample> = val_idx.iter().map(|&i| pairs[i].clone()).collect();

    let mut model = SimilarityModel::new(ds.dim(), cfg.hidden, cfg.layers, cfg.seed);
    let mut theta = model.theta.clone();
    let opt = Optim {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: StepLr::constant(cfg.lr),
        weight_decay: 0.0,
        seed: cfg.seed,
    };
    let history = train_loop(&mut theta, &train, &opt, |t, p, grad| {
        let v = &ds.videos[&p.video_id];
        let loss = model.accumulate(t, v.row(p.frame_a), v.row(p.frame_b), p.label == PairLabel::Similar, grad);
        (loss, 1.0)
    });
    model.theta = theta;
    model.train = Some(cfg.clone());
    let val_accuracy = if val.is_empty() {
        None
    } else {
        Some(pair_accuracy(&model, &val, ds)?)
    };
    Ok((
        model,
        SimTrainReport {
            epoch_losses: history,
            val_accuracy,
            num_train: train.len(),
            num_val: val.len(),
        },
    ))
}
