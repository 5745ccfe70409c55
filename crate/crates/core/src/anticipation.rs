//! Long-horizon action anticipation over the observed zone graph.
//!
//! Given the first `k = floor(K * M)` of a video's `M` clips, build the zone
//! graph of the frames observed so far, describe each node by the clips
//! that happened there, pass node features through a graph convolution
//! whose neighbourhood includes the node itself, mean-pool, and predict
//! which actions occur in the rest of the video.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{ClipAnnotation, Dataset, EmbeddingMatrix, Split};
use crate::error::{Error, Result};
use crate::metrics::{eval_map, EvalSplit, MapReport};
use crate::nn::{bce_grad, bce_with_logits, sigmoid, train_loop, Mlp, Optim, StepLr};
use crate::par::{rng_stream, Exec};
use crate::simnet::PairScorer;
use crate::topo::{build_graph, BuilderConfig, TopoGraph};

pub const CHECKPOINT_KIND: &str = "anticipation";
pub const SCHEMA_VERSION: u32 = 1;
pub const HORIZONS: [f64; 3] = [0.25, 0.5, 0.75];

/// What the future-action vector ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    #[default]
    Verbs,
    Interactions,
}

impl TargetMode {
    pub fn num_classes(self, ds: &Dataset) -> usize {
        match self {
            TargetMode::Verbs => ds.vocab.num_verbs(),
            TargetMode::Interactions => ds.vocab.num_interactions(),
        }
    }

    fn class_of(self, ds: &Dataset, c: &ClipAnnotation) -> Option<usize> {
        match self {
            TargetMode::Verbs => Some(c.verb_id),
            TargetMode::Interactions => ds.vocab.interaction_of(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnticipationSample {
    pub video_id: String,
    pub k: usize,
    pub k_frac: f64,
    pub observed_graph: TopoGraph,
    /// Mean frame embedding of each observed clip, in clip order.
    pub clip_features: Vec<Vec<f64>>,
    /// Input of the node MLP for each node: mean feature of its clips, or
    /// the mean frame embedding over its visits when it has none.
    pub node_inputs: Vec<Vec<f64>>,
    pub target: Vec<bool>,
}

/// Observed clip count: `floor(k_frac * m)`, at least one.
pub fn observed_count(k_frac: f64, m: usize) -> usize {
    ((k_frac * m as f64).floor() as usize).max(1)
}

/// Node of each clip: the node holding the most of its frames, provided
/// that is at least half of them; ties go to the lower node id.
pub fn assign_clips(graph: &TopoGraph, clips: &[&ClipAnnotation]) -> Vec<Option<usize>> {
    let owner = graph.frame_assignment();
    clips
        .iter()
        .map(|c| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for f in c.start_frame..=c.stop_frame.min(owner.len().saturating_sub(1)) {
                if let Some(n) = owner.get(f).copied().flatten() {
                    *counts.entry(n).or_default() += 1;
                }
            }
            let best = counts
                .iter()
                .fold(None, |acc: Option<(usize, usize)>, (&n, &k)| match acc {
                    Some((_, bk)) if bk >= k => acc,
                    _ => Some((n, k)),
                });
            best.filter(|&(_, k)| 2 * k >= c.len()).map(|(n, _)| n)
        })
        .collect()
}

fn mean_of(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r.iter()) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    out
}

/// Per-node MLP inputs from clip features, with the visit-frame fallback.
pub fn node_inputs(graph: &TopoGraph, video: &EmbeddingMatrix, clips: &[&ClipAnnotation], features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let assign = assign_clips(graph, clips);
    graph
        .nodes
        .iter()
        .map(|n| {
            let mine: Vec<&Vec<f64>> = assign
                .iter()
                .zip(features)
                .filter(|(a, _)| **a == Some(n.node_id))
                .map(|(_, f)| f)
                .collect();
            if !mine.is_empty() {
                return mean_of(&mine);
            }
            let mut sum = vec![0.0; video.dim()];
            let mut count = 0usize;
            for v in &n.visits {
                let m = video.mean_rows(v.start_frame, v.stop_frame);
                let len = v.len();
                for (s, x) in sum.iter_mut().zip(m) {
                    *s += x * len as f64;
                }
                count += len;
            }
            sum.iter_mut().for_each(|s| *s /= count.max(1) as f64);
            sum
        })
        .collect()
}

/// Build the sample observing the first `floor(k_frac * M)` clips.
pub fn build_observed_sample(
    ds: &Dataset,
    video_id: &str,
    k_frac: f64,
    builder: &BuilderConfig,
    scorer: &dyn PairScorer,
    mode: TargetMode,
) -> Result<AnticipationSample> {
    if !(k_frac > 0.0 && k_frac < 1.0) {
        return Err(Error::Config(format!("observed fraction must lie in (0, 1), got {k_frac}")));
    }
    let video = ds.video(video_id)?;
    let clips = ds.clips_of(video_id);
    let m = clips.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!("video {video_id} has {m} clips; anticipation needs at least 2")));
    }
    let k = observed_count(k_frac, m);
    let observed = &clips[..k];
    let end = observed.iter().map(|c| c.stop_frame).max().unwrap() + 1;
    let prefix = video.prefix(end)?;
    let graph = build_graph(&prefix, scorer, builder)?;
    let clip_features: Vec<Vec<f64>> = observed.iter().map(|c| prefix.mean_rows(c.start_frame, c.stop_frame)).collect();
    let node_inputs = node_inputs(&graph, &prefix, observed, &clip_features);
    let mut target = vec![false; mode.num_classes(ds)];
    for c in &clips[k..] {
        if let Some(d) = mode.class_of(ds, c) {
            target[d] = true;
        }
    }
    Ok(AnticipationSample {
        video_id: video_id.to_string(),
        k,
        k_frac,
        observed_graph: graph,
        clip_features,
        node_inputs,
        target,
    })
}

/// Samples for every video and horizon, in (video, horizon) order.
pub fn build_samples(
    ds: &Dataset,
    videos: &[String],
    horizons: &[f64],
    builder: &BuilderConfig,
    scorer: &dyn PairScorer,
    mode: TargetMode,
    exec: Exec,
) -> Result<Vec<AnticipationSample>> {
    let jobs: Vec<(&String, f64)> = videos.iter().flat_map(|v| horizons.iter().map(move |&h| (v, h))).collect();
    exec.map(&jobs, |&(v, h)| build_observed_sample(ds, v, h, builder, scorer, mode))
        .into_iter()
        .collect()
}

/// `g_n = ReLU(W (sum over N(n) and n of x_m) + b)` for one layer whose
/// parameters are laid out as an [`Mlp`] with `relu_last`.
pub fn gcn_forward(neighbors: &[Vec<usize>], x: &[Vec<f64>], layer: &Mlp, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    if x.len() != neighbors.len() {
        return Err(Error::DimMismatch {
            expected: neighbors.len(),
            found: x.len(),
        });
    }
    if let Some(r) = x.iter().find(|r| r.len() != layer.input_dim()) {
        return Err(Error::DimMismatch {
            expected: layer.input_dim(),
            found: r.len(),
        });
    }
    Ok(aggregate(neighbors, x).iter().map(|a| layer.apply(theta, a)).collect())
}

fn aggregate(neighbors: &[Vec<usize>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|n| {
            let mut a = x[n].clone();
            for &m in &neighbors[n] {
                for (s, v) in a.iter_mut().zip(&x[m]) {
                    *s += v;
                }
            }
            a
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnticipationTrainConfig {
    pub hidden: usize,
    /// Graph convolution layers; zero drops the graph entirely.
    pub gcn_layers: usize,
    pub lr: f64,
    pub lr_milestone: usize,
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AnticipationTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            gcn_layers: 1,
            lr: 1e-3,
            lr_milestone: 80,
            lr_gamma: 0.1,
            weight_decay: 1e-5,
            batch_size: 256,
            epochs: 100,
            seed: 0,
        }
    }
}

impl AnticipationTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.epochs == 0 || !(self.lr > 0.0) || !(self.lr_gamma > 0.0) {
            return Err(Error::Config("anticipation training values must be positive".into()));
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
                gamma: self.lr_gamma,
            },
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticipationMeta {
    pub schema_version: u32,
    pub dim: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub num_classes: usize,
    pub train: Option<AnticipationTrainConfig>,
}

/// Node MLP, graph convolutions, mean pooling and a linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AnticipationModel {
    node_mlp: Mlp,
    gcn: Vec<Mlp>,
    head: Mlp,
    theta: Vec<f64>,
    pub train: Option<AnticipationTrainConfig>,
}

struct Tape {
    node: Vec<crate::nn::MlpTape>,
    /// Per layer: aggregated inputs' tapes.
    gcn: Vec<Vec<crate::nn::MlpTape>>,
    pooled: Vec<f64>,
    logits: Vec<f64>,
}

impl AnticipationModel {
    pub fn new(dim: usize, hidden: usize, gcn_layers: usize, num_classes: usize, seed: u64) -> Self {
        let node_mlp = Mlp::new(vec![dim, hidden, hidden], true);
        let gcn: Vec<Mlp> = (0..gcn_layers).map(|_| Mlp::new(vec![hidden, hidden], true)).collect();
        let head = Mlp::new(vec![hidden, num_classes], false);
        let mut rng = rng_stream(seed, 0x414e_5449);
        let mut theta = node_mlp.init(&mut rng);
        for g in &gcn {
            theta.extend(g.init(&mut rng));
        }
        theta.extend(head.init(&mut rng));
        Self {
            node_mlp,
            gcn,
            head,
            theta,
            train: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.node_mlp.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.head.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn gcn_layers(&self) -> usize {
        self.gcn.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_params(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::DimMismatch {
                expected: self.theta.len(),
                found: theta.len(),
            });
        }
        self.theta = theta;
        Ok(())
    }

    fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut off = 0;
        for n in std::iter::once(self.node_mlp.num_params())
            .chain(self.gcn.iter().map(Mlp::num_params))
            .chain(std::iter::once(self.head.num_params()))
        {
            out.push(off..off + n);
            off += n;
        }
        out
    }

    fn check_inputs(&self, s: &AnticipationSample) -> Result<()> {
        if s.node_inputs.is_empty() {
            return Err(Error::InvalidInput(format!("empty observed graph for {}", s.video_id)));
        }
        if let Some(x) = s.node_inputs.iter().find(|x| x.len() != self.dim()) {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, theta: &[f64], neighbors: &[Vec<usize>], inputs: &[Vec<f64>]) -> Tape {
        let r = self.ranges();
        let node: Vec<_> = inputs.iter().map(|x| self.node_mlp.forward(&theta[r[0].clone()], x)).collect();
        let mut h: Vec<Vec<f64>> = node.iter().map(|t| t.output().to_vec()).collect();
        let mut gcn = Vec::with_capacity(self.gcn.len());
        for (l, layer) in self.gcn.iter().enumerate() {
            let tapes: Vec<_> = aggregate(neighbors, &h)
                .iter()
                .map(|a| layer.forward(&theta[r[1 + l].clone()], a))
                .collect();
            h = tapes.iter().map(|t| t.output().to_vec()).collect();
            gcn.push(tapes);
        }
        let mut pooled = vec![0.0; self.hidden()];
        for row in &h {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= h.len() as f64);
        let logits = self.head.apply(&theta[r[r.len() - 1].clone()], &pooled);
        Tape {
            node,
            gcn,
            pooled,
            logits,
        }
    }

    pub fn logits_with(&self, theta: &[f64], s: &AnticipationSample) -> Vec<f64> {
        self.forward(theta, &s.observed_graph.neighbors(), &s.node_inputs).logits
    }

    pub fn predict_future(&self, s: &AnticipationSample) -> Result<Vec<f64>> {
        self.check_inputs(s)?;
        Ok(self.logits_with(&self.theta, s).into_iter().map(sigmoid).collect())
    }

    /// Mean BCE over classes of one sample.
    pub fn loss(&self, theta: &[f64], s: &AnticipationSample) -> f64 {
        let z = self.logits_with(theta, s);
        z.iter()
            .zip(&s.target)
            .map(|(&z, &y)| bce_with_logits(z, if y { 1.0 } else { 0.0 }))
            .sum::<f64>()
            / z.len() as f64
    }

    /// Adds the gradient of the summed class BCE to `grad`; returns
    /// `(loss_sum, num_classes)`.
    pub fn accumulate(&self, theta: &[f64], s: &AnticipationSample, grad: &mut [f64]) -> (f64, f64) {
        let neighbors = s.observed_graph.neighbors();
        let tape = self.forward(theta, &neighbors, &s.node_inputs);
        let r = self.ranges();
        let mut loss = 0.0;
        let dlogits: Vec<f64> = tape
            .logits
            .iter()
            .zip(&s.target)
            .map(|(&z, &y)| {
                let y = if y { 1.0 } else { 0.0 };
                loss += bce_with_logits(z, y);
                bce_grad(z, y)
            })
            .collect();
        let head_range = r[r.len() - 1].clone();
        let head_tape = self.head.forward(&theta[head_range.clone()], &tape.pooled);
        let dpooled = self
            .head
            .backward(&theta[head_range.clone()], &head_tape, &dlogits, &mut grad[head_range]);
        let n = s.node_inputs.len();
        let mut dh: Vec<Vec<f64>> = vec![dpooled.iter().map(|d| d / n as f64).collect(); n];
        for (l, layer) in self.gcn.iter().enumerate().rev() {
            let lr = r[1 + l].clone();
            let dagg: Vec<Vec<f64>> = tape.gcn[l]
                .iter()
                .zip(&dh)
                .map(|(t, d)| layer.backward(&theta[lr.clone()], t, d, &mut grad[lr.clone()]))
                .collect();
            // the aggregation is symmetric, so its adjoint is itself
            dh = aggregate(&neighbors, &dagg);
        }
        let nr = r[0].clone();
        for (t, d) in tape.node.iter().zip(&dh) {
            self.node_mlp.backward(&theta[nr.clone()], t, d, &mut grad[nr.clone()]);
        }
        (loss, dlogits.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<AnticipationMeta> {
        Checkpoint {
            meta: AnticipationMeta {
                schema_version: SCHEMA_VERSION,
                dim: self.dim(),
                hidden: self.hidden(),
                gcn_layers: self.gcn_layers(),
                num_classes: self.num_classes(),
                train: self.train.clone(),
            },
            params: self.theta.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<AnticipationMeta>) -> Result<Self> {
        let m = ck.meta;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                what: "anticipation model".into(),
                expected: SCHEMA_VERSION,
                found: m.schema_version,
            });
        }
        let mut model = Self::new(m.dim, m.hidden, m.gcn_layers, m.num_classes, 0);
        model.train = m.train;
        model.set_params(ck.params)?;
        Ok(model)
    }
}

pub fn train_anticipation(
    samples: &[AnticipationSample],
    cfg: &AnticipationTrainConfig,
) -> Result<(AnticipationModel, Vec<f64>)> {
    cfg.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("no anticipation training samples".into()))?;
    let (dim, classes) = (first.node_inputs[0].len(), first.target.len());
    let mut model = AnticipationModel::new(dim, cfg.hidden, cfg.gcn_layers, classes, cfg.seed);
    for s in samples {
        model.check_inputs(s)?;
        if s.target.len() != classes {
            return Err(Error::DimMismatch {
                expected: classes,
                found: s.target.len(),
            });
        }
    }
    let mut theta = model.theta.clone();
    let history = train_loop(&mut theta, samples, &cfg.optim(), |t, s, g| model.accumulate(t, s, g));
    if theta.iter().any(|p| !p.is_finite()) {
        return Err(Error::Invariant("anticipation training diverged".into()));
    }
    model.theta = theta;
    model.train = Some(cfg.clone());
    Ok((model, history))
}

/// Fraction of training videos in which each class occurs.
pub fn train_dist(ds: &Dataset, videos: &[String], mode: TargetMode) -> Vec<f64> {
    let mut counts = vec![0.0; mode.num_classes(ds)];
    for v in videos {
        let mut seen = vec![false; counts.len()];
        for c in ds.clips_of(v) {
            if let Some(d) = mode.class_of(ds, c) {
                seen[d] = true;
            }
        }
        for (c, s) in counts.iter_mut().zip(seen) {
            *c += s as u8 as f64;
        }
    }
    counts.iter_mut().for_each(|c| *c /= videos.len().max(1) as f64);
    counts
}

/// Up to `max` clip features picked at evenly spaced indices, averaged.
pub fn pooled_clip_feature(features: &[Vec<f64>], max: usize) -> Vec<f64> {
    let n = features.len();
    let picks: Vec<&Vec<f64>> = if n <= max {
        features.iter().collect()
    } else {
        (0..max).map(|i| &features[i * n / max]).collect()
    };
    mean_of(&picks)
}

pub const MEAN_POOL_CLIPS: usize = 64;

/// Linear classifier on the mean of sampled observed clip features.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPoolModel {
    head: Mlp,
    theta: Vec<f64>,
}

impl MeanPoolModel {
    pub fn new(dim: usize, num_classes: usize, seed: u64) -> Self {
        let head = Mlp::new(vec![dim, num_classes], false);
        let theta = head.init(&mut rng_stream(seed, 0x4d50));
        Self { head, theta }
    }

    pub fn predict(&self, s: &AnticipationSample) -> Vec<f64> {
        let x = pooled_clip_feature(&s.clip_features, MEAN_POOL_CLIPS);
        self.head.apply(&self.theta, &x).into_iter().map(sigmoid).collect()
    }

    pub fn train(samples: &[AnticipationSample], cfg: &AnticipationTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidInput("no anticipation training samples".into()))?;
        let mut model = Self::new(first.clip_features[0].len(), first.target.len(), cfg.seed);
        let data: Vec<(Vec<f64>, &Vec<bool>)> = samples
            .iter()
            .map(|s| (pooled_clip_feature(&s.clip_features, MEAN_POOL_CLIPS), &s.target))
            .collect();
        let head = model.head.clone();
        let mut theta = model.theta.clone();
        train_loop(&mut theta, &data, &cfg.optim(), |t, (x, y), g| {
            let tape = head.forward(t, x);
            let mut loss = 0.0;
            let d: Vec<f64> = tape
                .output()
                .iter()
                .zip(y.iter())
                .map(|(&z, &y)| {
                    let y = if y { 1.0 } else { 0.0 };
                    loss += bce_with_logits(z, y);
                    bce_grad(z, y)
                })
                .collect();
            head.backward(t, &tape, &d, g);
            (loss, d.len() as f64)
        });
        model.theta = theta;
        Ok(model)
    }
}

/// mAP per horizon plus the mean over horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticipationReport {
    /// Keyed by the observed percentage, e.g. "25".
    pub per_horizon: BTreeMap<String, MapReport>,
    pub mean_all: Option<f64>,
    pub mean_freq: Option<f64>,
    pub mean_rare: Option<f64>,
}

pub fn horizon_key(k_frac: f64) -> String {
    format!("{}", (k_frac * 100.0).round() as u32)
}

/// Score every sample with `predict` and evaluate per horizon.
pub fn evaluate_predictions(
    samples: &[AnticipationSample],
    scores: &[Vec<f64>],
    split: &EvalSplit,
    exec: Exec,
) -> Result<AnticipationReport> {
    let mut by_h: BTreeMap<String, (Vec<Vec<f64>>, Vec<Vec<bool>>)> = BTreeMap::new();
    for (s, p) in samples.iter().zip(scores) {
        let e = by_h.entry(horizon_key(s.k_frac)).or_default();
        e.0.push(p.clone());
        e.1.push(s.target.clone());
    }
    let mut per_horizon = BTreeMap::new();
    for (k, (sc, gt)) in by_h {
        per_horizon.insert(k, eval_map(&sc, &gt, split, exec)?);
    }
    let mean = |f: fn(&MapReport) -> Option<f64>| {
        let v: Vec<f64> = per_horizon.values().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(AnticipationReport {
        mean_all: mean(|r| r.all),
        mean_freq: mean(|r| r.freq),
        mean_rare: mean(|r| r.rare),
        per_horizon,
    })
}

/// Clip-level training instances per class.
pub fn class_counts(ds: &Dataset, videos: &[String], mode: TargetMode) -> Vec<usize> {
    let mut counts = vec![0; mode.num_classes(ds)];
    for v in videos {
        for c in ds.clips_of(v) {
            if let Some(d) = mode.class_of(ds, c) {
                counts[d] += 1;
            }
        }
    }
    counts
}

/// Scores of every method on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticipationComparison {
    pub train_dist: AnticipationReport,
    pub mean_pool: AnticipationReport,
    pub ours_wo_gcn: AnticipationReport,
    pub ours: AnticipationReport,
}

/// Train and evaluate all methods on the train/test split of `ds`.
pub fn compare_methods(
    ds: &Dataset,
    builder: &BuilderConfig,
    scorer: &dyn PairScorer,
    cfg: &AnticipationTrainConfig,
    mode: TargetMode,
    exec: Exec,
) -> Result<AnticipationComparison> {
    let train_ids = ds.video_ids(Split::Train);
    let test_ids = ds.video_ids(Split::Test);
    let train = build_samples(ds, &train_ids, &HORIZONS, builder, scorer, mode, exec)?;
    let test = build_samples(ds, &test_ids, &HORIZONS, builder, scorer, mode, exec)?;
    let split = EvalSplit::from_counts(&class_counts(ds, &train_ids, mode));

    let dist = train_dist(ds, &train_ids, mode);
    let dist_scores: Vec<Vec<f64>> = test.iter().map(|_| dist.clone()).collect();
    let mp = MeanPoolModel::train(&train, cfg)?;
    let mp_scores: Vec<Vec<f64>> = test.iter().map(|s| mp.predict(s)).collect();
    let (wo, _) = train_anticipation(
        &train,
        &AnticipationTrainConfig {
            gcn_layers: 0,
            ..cfg.clone()
        },
    )?;
    let wo_scores = test.iter().map(|s| wo.predict_future(s)).collect::<Result<Vec<_>>>()?;
    let (ours, _) = train_anticipation(&train, cfg)?;
    let ours_scores = test.iter().map(|s| ours.predict_future(s)).collect::<Result<Vec<_>>>()?;
    Ok(AnticipationComparison {
        train_dist: evaluate_predictions(&test, &dist_scores, &split, exec)?,
        mean_pool: evaluate_predictions(&test, &mp_scores, &split, exec)?,
        ours_wo_gcn: evaluate_predictions(&test, &wo_scores, &split, exec)?,
        ours: evaluate_predictions(&test, &ours_scores, &split, exec)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionVocab;
    use crate::nn::{max_rel_err, numeric_grad};
    use crate::topo::{Visit, ZoneNode};
    use rand::Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> TopoGraph {
        TopoGraph {
            video_id: "v".into(),
            num_frames: n * 10,
            nodes: (0..n)
                .map(|i| ZoneNode {
                    node_id: i,
                    visits: vec![Visit {
                        start_frame: i * 10,
                        stop_frame: i * 10 + 9,
                    }],
                    sample_frames: vec![vec![i * 10]],
                })
                .collect(),
            edges: edges.iter().map(|&e| (e, 1)).collect(),
            ignored_frames: vec![],
        }
    }

    fn sample(g: TopoGraph, inputs: Vec<Vec<f64>>, target: Vec<bool>) -> AnticipationSample {
        AnticipationSample {
            video_id: "v".into(),
            k: 1,
            k_frac: 0.5,
            observed_graph: g,
            clip_features: inputs.clone(),
            node_inputs: inputs,
            target,
        }
    }

    #[test]
    fn floor_arithmetic() {
        assert_eq!(observed_count(0.25, 8), 2);
        assert_eq!(observed_count(0.75, 8), 6);
        assert_eq!(observed_count(0.25, 2), 1);
    }

    #[test]
    fn gcn_isolated_node_and_sum() {
        let id = Mlp::new(vec![2, 2], true);
        let theta = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let g = gcn_forward(&[vec![]], &[vec![0.5, -1.0]], &id, &theta).unwrap();
        assert_eq!(g, vec![vec![0.5, 0.0]]);
        let u = vec![1.0, 2.0];
        let v = vec![0.5, 0.25];
        let g = gcn_forward(&[vec![1], vec![0]], &[u, v], &id, &theta).unwrap();
        assert_eq!(g[0], vec![1.5, 2.25]);
        assert_eq!(g[0], g[1]);
        assert!(gcn_forward(&[vec![]], &[vec![1.0]], &id, &theta).is_err());
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let mut m = AnticipationModel::new(3, 4, 1, 5, 0);
        m.set_params(vec![0.0; m.params().len()]).unwrap();
        let s = sample(graph(2, &[(0, 1)]), vec![vec![1.0; 3]; 2], vec![false; 5]);
        assert_eq!(m.predict_future(&s).unwrap(), vec![0.5; 5]);
    }

    #[test]
    fn relabelling_and_duplicating_nodes_keep_the_prediction() {
        let m = AnticipationModel::new(3, 6, 1, 4, 2);
        let xs = vec![vec![0.1, 0.5, -0.2], vec![1.0, -0.3, 0.4], vec![-0.6, 0.2, 0.9]];
        let s = sample(graph(3, &[(0, 1), (1, 2)]), xs.clone(), vec![false; 4]);
        let p = m.predict_future(&s).unwrap();
        // swap ids 0 and 2
        let perm = sample(graph(3, &[(2, 1), (1, 0)]), vec![xs[2].clone(), xs[1].clone(), xs[0].clone()], vec![false; 4]);
        let q = m.predict_future(&perm).unwrap();
        assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-12));
        // a disjoint copy of the graph
        let mut dup = xs.clone();
        dup.extend(xs.clone());
        let d = sample(graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5)]), dup, vec![false; 4]);
        let r = m.predict_future(&d).unwrap();
        assert!(p.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_stream(11, 0);
        for layers in [0, 1, 2] {
            let m = AnticipationModel::new(3, 5, layers, 4, layers as u64);
            let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let s = sample(graph(4, &[(0, 1), (1, 2), (2, 0), (2, 3)]), xs, vec![true, false, true, false]);
            let mut g = vec![0.0; m.params().len()];
            m.accumulate(m.params(), &s, &mut g);
            let fd = numeric_grad(m.params(), 1e-6, |t| m.loss(t, &s) * 4.0);
            let err = max_rel_err(&g, &fd, 1e-6);
            assert!(err < 1e-4, "layers {layers}: {err}");
        }
    }

    #[test]
    fn clip_assignment_needs_half_the_frames() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let clip = |s, e| ClipAnnotation {
            video_id: "v".into(),
            start_frame: s,
            stop_frame: e,
            verb_id: 0,
            noun_id: 0,
        };
        let clips = [clip(2, 5), clip(8, 13), clip(5, 14), clip(15, 24)];
        let refs: Vec<&ClipAnnotation> = clips.iter().collect();
        // [8,13]: 2 frames in node 0, 4 in node 1; [5,14]: 5 and 5, tie to 0
        assert_eq!(assign_clips(&g, &refs), vec![Some(0), Some(1), Some(0), Some(1)]);
        let mut ig = graph(2, &[(0, 1)]);
        ig.nodes[1].visits[0].start_frame = 16;
        ig.ignored_frames = (10..16).collect();
        assert_eq!(assign_clips(&ig, &[&clip(8, 14)]), vec![None]);
    }

    fn tiny_dataset(verbs: &[usize]) -> Dataset {
        let m = EmbeddingMatrix::new("v", 6.0, 2, (0..200).map(|i| (i % 2) as f32).collect()).unwrap();
        let vocab = InteractionVocab::new(
            (0..4).map(|i| format!("v{i}")).collect(),
            vec!["n".into()],
            (0..4).map(|v| (v, 0)).collect(),
        )
        .unwrap();
        let anns = verbs
            .iter()
            .enumerate()
            .map(|(i, &v)| ClipAnnotation {
                video_id: "v".into(),
                start_frame: i * 10,
                stop_frame: i * 10 + 4,
                verb_id: v,
                noun_id: 0,
            })
            .collect();
        Dataset::new(vec![m], anns, vocab, BTreeMap::new(), BTreeMap::new()).unwrap()
    }

    #[test]
    fn targets_cover_the_unobserved_clips() {
        let ds = tiny_dataset(&[0, 1, 0, 1, 2, 2, 3, 3]);
        let sc = crate::simnet::CosineScorer::default();
        let s = build_observed_sample(&ds, "v", 0.25, &BuilderConfig::default(), &sc, TargetMode::Verbs).unwrap();
        assert_eq!(s.k, 2);
        assert_eq!(s.observed_graph.num_frames, 15);
        assert_eq!(s.target, vec![true, true, true, true]);
        let s = build_observed_sample(&ds, "v", 0.75, &BuilderConfig::default(), &sc, TargetMode::Verbs).unwrap();
        assert_eq!(s.target, vec![false, false, false, true]);
        let one = tiny_dataset(&[0]);
        assert!(build_observed_sample(&one, "v", 0.5, &BuilderConfig::default(), &sc, TargetMode::Verbs).is_err());
    }

    #[test]
    fn train_dist_counts_videos() {
        let ds = tiny_dataset(&[2, 2, 1]);
        assert_eq!(train_dist(&ds, &["v".to_string()], TargetMode::Verbs), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn mean_pool_of_identical_clips_is_the_clip() {
        let u = vec![0.3, -0.7];
        let feats = vec![u.clone(); 100];
        let p = pooled_clip_feature(&feats, 64);
        assert!(p.iter().zip(&u).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = AnticipationModel::new(3, 4, 1, 2, 5);
        let bytes = m.to_checkpoint().encode(CHECKPOINT_KIND).unwrap();
        let back = AnticipationModel::from_checkpoint(Checkpoint::decode(&bytes, CHECKPOINT_KIND).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
