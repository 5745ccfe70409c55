//! Synthetic kitchens with known ground truth.
//!
//! A world has `n_zones` functional zone types. Every environment (kitchen)
//! instantiates each type once, at its own centroid, so the same function
//! looks different in different kitchens. A video is a Markov walk over the
//! zones of one kitchen with geometric dwell times; frames are the zone
//! centroid plus isotropic noise, and a random fraction of frames carries a
//! large offset from a shared low-rank "active object" subspace. Clips are
//! laid out inside dwells and labelled from the zone's interaction weights.
//!
//! Each zone type owns a block of verbs and nouns; its interactions are
//! all pairs within the block. The last `rare_per_type` interactions of a
//! type are rare: they carry a small weight and, when `rare_exclusive` is
//! set, can only be observed in one kitchen, while every kitchen's zone of
//! that type still affords them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClipAnnotation, Dataset, EmbeddingMatrix, InteractionVocab, Split};
use crate::error::{Error, Result};
use crate::par::{rng_stream, Exec};

const CENTROID_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub zone_id: usize,
    pub environment: usize,
    pub zone_type: usize,
    pub centroid: Vec<f64>,
    /// RMS norm of the per-frame noise vector.
    pub noise_scale: f64,
    /// Interactions with non-zero weight here, ascending.
    pub affordance_set: Vec<usize>,
    /// Weight of every interaction in the vocabulary.
    pub interaction_weights: Vec<f64>,
    pub action_dist: Vec<f64>,
    pub object_dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_zones: usize,
    pub n_environments: usize,
    pub dim: usize,
    /// Minimum centroid distance as a multiple of `noise_scale`.
    pub separation: f64,
    pub noise_scale: f64,
    pub dwell_mean: f64,
    /// Row-stochastic zone transition matrix; uniform over the other zones
    /// when absent.
    pub transition: Option<Vec<Vec<f64>>>,
    /// Norm of the active-object offset.
    pub active_object_noise: f64,
    pub active_object_fraction: f64,
    pub active_object_rank: usize,
    pub videos_per_environment: usize,
    pub test_videos_per_environment: usize,
    pub frames_per_video: usize,
    pub fps: f64,
    pub verbs_per_type: usize,
    pub nouns_per_type: usize,
    pub rare_per_type: usize,
    pub rare_weight: f64,
    pub rare_exclusive: bool,
    pub clip_len: [usize; 2],
    pub clip_gap: [usize; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_zones: 6,
            n_environments: 1,
            dim: 64,
            separation: 10.0,
            noise_scale: 1.0,
            dwell_mean: 50.0,
            transition: None,
            active_object_noise: 4.0,
            active_object_fraction: 0.2,
            active_object_rank: 2,
            videos_per_environment: 5,
            test_videos_per_environment: 0,
            frames_per_video: 2000,
            fps: 6.0,
            verbs_per_type: 2,
            nouns_per_type: 2,
            rare_per_type: 0,
            rare_weight: 0.05,
            rare_exclusive: true,
            clip_len: [6, 16],
            clip_gap: [2, 12],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_zones == 0 || self.n_environments == 0 || self.dim == 0 {
            return bad("n_zones, n_environments and dim must be positive".into());
        }
        if !(self.separation > 0.0) || !(self.noise_scale >= 0.0) {
            return bad("separation must be positive and noise_scale non-negative".into());
        }
        if !(self.dwell_mean >= 1.0) {
            return bad(format!("dwell_mean must be at least 1, got {}", self.dwell_mean));
        }
        if !(0.0..=1.0).contains(&self.active_object_fraction) || !(self.active_object_noise >= 0.0) {
            return bad("active_object_fraction must lie in [0, 1] and active_object_noise be non-negative".into());
        }
        if self.active_object_rank == 0 {
            return bad("active_object_rank must be positive".into());
        }
        if self.videos_per_environment == 0 || self.frames_per_video == 0 || !(self.fps > 0.0) {
            return bad("videos_per_environment, frames_per_video and fps must be positive".into());
        }
        if self.test_videos_per_environment > self.videos_per_environment {
            return bad("more test videos than videos per environment".into());
        }
        if self.verbs_per_type == 0 || self.nouns_per_type == 0 {
            return bad("verbs_per_type and nouns_per_type must be positive".into());
        }
        if self.rare_per_type >= self.verbs_per_type * self.nouns_per_type {
            return bad("every zone type needs at least one common interaction".into());
        }
        if !(self.rare_weight > 0.0) {
            return bad("rare_weight must be positive".into());
        }
        if self.clip_len[0] == 0 || self.clip_len[0] > self.clip_len[1] || self.clip_gap[0] > self.clip_gap[1] {
            return bad("clip_len and clip_gap must be ordered [min, max] ranges, clip_len min > 0".into());
        }
        if let Some(t) = &self.transition {
            check_transition(t, self.n_zones)?;
        }
        Ok(())
    }

    pub fn interactions_per_type(&self) -> usize {
        self.verbs_per_type * self.nouns_per_type
    }

    pub fn num_interactions(&self) -> usize {
        self.n_zones * self.interactions_per_type()
    }

    /// Environment in which rare interaction `j` of `zone_type` is
    /// observable when `rare_exclusive` holds.
    pub fn rare_home(&self, zone_type: usize, j: usize) -> usize {
        (zone_type + j) % self.n_environments
    }

    pub fn is_rare(&self, interaction: usize) -> bool {
        interaction % self.interactions_per_type() >= self.interactions_per_type() - self.rare_per_type
    }
}

fn check_transition(t: &[Vec<f64>], n: usize) -> Result<()> {
    if t.len() != n || t.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("transition must be {n}x{n}")));
    }
    for (i, row) in t.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("transition row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// Uniform transitions to every other zone; a single zone stays put.
pub fn default_transition(n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0]];
    }
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 / (n - 1) as f64 }).collect())
        .collect()
}

/// Stationary distribution of a row-stochastic matrix by power iteration
/// on the lazy chain (handles periodic chains).
pub fn stationary_distribution(t: &[Vec<f64>]) -> Vec<f64> {
    let n = t.len();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] += 0.5 * p[i];
            for j in 0..n {
                next[j] += 0.5 * p[i] * t[i][j];
            }
        }
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if diff < 1e-15 {
            break;
        }
    }
    p
}

/// Vocabulary with one verb/noun block per zone type.
pub fn vocabulary(cfg: &SynthConfig) -> Result<InteractionVocab> {
    let (vpt, npt) = (cfg.verbs_per_type, cfg.nouns_per_type);
    let verbs = (0..cfg.n_zones * vpt).map(|v| format!("verb{v}")).collect();
    let nouns = (0..cfg.n_zones * npt).map(|n| format!("noun{n}")).collect();
    let mut interactions = Vec::with_capacity(cfg.num_interactions());
    for t in 0..cfg.n_zones {
        for v in 0..vpt {
            for n in 0..npt {
                interactions.push((t * vpt + v, t * npt + n));
            }
        }
    }
    InteractionVocab::new(verbs, nouns, interactions)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Centroids for `count` zones, pairwise at least `separation *
/// noise_scale` apart, by rejection sampling.
pub fn sample_centroids(cfg: &SynthConfig, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let min_d = cfg.separation * cfg.noise_scale;
    // typical pairwise distance of N(0, s^2 I) draws is s * sqrt(2 dim)
    let std = (1.25 * min_d / (2.0 * cfg.dim as f64).sqrt()).max(1e-3);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for z in 0..count {
        let mut placed = false;
        for _ in 0..CENTROID_RETRIES {
            let c = gaussian_vec(rng, cfg.dim, std);
            if out.iter().all(|o| dist(o, &c) >= min_d) {
                out.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place zone {z} with separation {} in dim {} after {CENTROID_RETRIES} tries",
                cfg.separation, cfg.dim
            )));
        }
    }
    Ok(out)
}

fn marginals(weights: &[f64], vocab: &InteractionVocab) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; vocab.num_verbs()];
    let mut o = vec![0.0; vocab.num_nouns()];
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for (k, &w) in weights.iter().enumerate() {
            let (v, n) = vocab.interactions[k];
            a[v] += w / total;
            o[n] += w / total;
        }
    }
    (a, o)
}

/// Zones of every environment, numbered `env * n_zones + type`.
pub fn generate_environments(cfg: &SynthConfig) -> Result<Vec<ZoneSpec>> {
    cfg.validate()?;
    let vocab = vocabulary(cfg)?;
    let mut rng = rng_stream(cfg.seed, 1);
    let centroids = sample_centroids(cfg, cfg.n_zones * cfg.n_environments, &mut rng)?;
    let ipt = cfg.interactions_per_type();
    let mut zones = Vec::with_capacity(centroids.len());
    for (zone_id, centroid) in centroids.into_iter().enumerate() {
        let (env, ty) = (zone_id / cfg.n_zones, zone_id % cfg.n_zones);
        let mut weights = vec![0.0; vocab.num_interactions()];
        for j in 0..ipt {
            let rare_j = j.checked_sub(ipt - cfg.rare_per_type);
            weights[ty * ipt + j] = match rare_j {
                None => 1.0,
                Some(r) if !cfg.rare_exclusive || cfg.rare_home(ty, r) == env => cfg.rare_weight,
                Some(_) => 0.0,
            };
        }
        let (action_dist, object_dist) = marginals(&weights, &vocab);
        zones.push(ZoneSpec {
            zone_id,
            environment: env,
            zone_type: ty,
            centroid,
            noise_scale: cfg.noise_scale,
            affordance_set: (0..weights.len()).filter(|&k| weights[k] > 0.0).collect(),
            interaction_weights: weights,
            action_dist,
            object_dist,
        });
    }
    Ok(zones)
}

/// Interactions every zone of a type affords, observed or not.
pub fn type_affordances(cfg: &SynthConfig, zone_type: usize) -> Vec<usize> {
    let ipt = cfg.interactions_per_type();
    (zone_type * ipt..(zone_type + 1) * ipt).collect()
}

fn object_basis(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = rng_stream(cfg.seed, 2);
    (0..cfg.active_object_rank)
        .map(|_| {
            let v = gaussian_vec(&mut rng, cfg.dim, 1.0);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    weights.iter().rposition(|&w| w > 0.0)
}

/// One simulated video.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub embeddings: EmbeddingMatrix,
    pub clips: Vec<ClipAnnotation>,
    /// Global zone id of every frame.
    pub frame_zone: Vec<usize>,
}

/// How clip labels are drawn: given the global zone id, return weights
/// over the interaction vocabulary.
pub type ClipWeights<'a> = dyn Fn(usize) -> Vec<f64> + Sync + 'a;

/// Walk `transition` over `zones` (local indices) for `cfg.frames_per_video`
/// frames. `start` fixes the first zone; otherwise it is uniform.
#[allow(clippy::too_many_arguments)]
pub fn generate_video(
    video_id: &str,
    zones: &[ZoneSpec],
    transition: &[Vec<f64>],
    start: Option<usize>,
    cfg: &SynthConfig,
    clip_weights: &ClipWeights<'_>,
    vocab: &InteractionVocab,
    rng: &mut ChaCha8Rng,
) -> Result<SynthVideo> {
    if zones.is_empty() {
        return Err(Error::InvalidInput("no zones to walk".into()));
    }
    check_transition(transition, zones.len())?;
    let basis = object_basis(cfg);
    let frames = cfg.frames_per_video;
    let dwell = Geometric::new(1.0 / cfg.dwell_mean).map_err(|e| Error::Config(e.to_string()))?;
    let noise_std = cfg.noise_scale / (cfg.dim as f64).sqrt();

    let mut local = match start {
        Some(s) if s < zones.len() => s,
        Some(s) => return Err(Error::InvalidInput(format!("start zone {s} out of range"))),
        None => rng.random_range(0..zones.len()),
    };
    let mut frame_zone = Vec::with_capacity(frames);
    let mut clips = Vec::new();
    let mut rows = Vec::with_capacity(frames * cfg.dim);
    while frame_zone.len() < frames {
        let len = (1 + dwell.sample(rng) as usize).min(frames - frame_zone.len());
        let begin = frame_zone.len();
        let zone = &zones[local];
        frame_zone.extend(std::iter::repeat_n(zone.zone_id, len));

        let weights = clip_weights(zone.zone_id);
        let mut cursor = begin + rng.random_range(cfg.clip_gap[0]..=cfg.clip_gap[1]);
        loop {
            let clen = rng.random_range(cfg.clip_len[0]..=cfg.clip_len[1]);
            if cursor + clen > begin + len {
                break;
            }
            let Some(k) = pick(&weights, rng) else { break };
            let (verb_id, noun_id) = vocab.interactions[k];
            clips.push(ClipAnnotation {
                video_id: video_id.to_string(),
                start_frame: cursor,
                stop_frame: cursor + clen - 1,
                verb_id,
                noun_id,
            });
            cursor += clen + rng.random_range(cfg.clip_gap[0]..=cfg.clip_gap[1]);
        }

        for _ in 0..len {
            let mut f: Vec<f64> = zone
                .centroid
                .iter()
                .map(|&c| c + noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect();
            if cfg.active_object_noise > 0.0 && rng.random::<f64>() < cfg.active_object_fraction {
                let coef = gaussian_vec(rng, basis.len(), 1.0);
                let mut off = vec![0.0; cfg.dim];
                for (c, b) in coef.iter().zip(&basis) {
                    for (o, &x) in off.iter_mut().zip(b) {
                        *o += c * x;
                    }
                }
                let n = off.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for (x, o) in f.iter_mut().zip(&off) {
                    *x += cfg.active_object_noise * o / n;
                }
            }
            rows.extend(f.iter().map(|&x| x as f32));
        }
        local = pick(&transition[local], rng).unwrap_or(local);
    }
    Ok(SynthVideo {
        embeddings: EmbeddingMatrix::new(video_id, cfg.fps, cfg.dim, rows)?,
        clips,
        frame_zone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Global zone id of every frame, per video.
    pub frame_zone: BTreeMap<String, Vec<usize>>,
    /// Everything each zone affords, keyed by global zone id.
    pub zone_affordances: BTreeMap<usize, Vec<usize>>,
    pub zone_type: Vec<usize>,
    pub zone_environment: Vec<usize>,
    /// Task index per video for the anticipation benchmark.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub video_task: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub dataset: Dataset,
    pub zones: Vec<ZoneSpec>,
    pub truth: GroundTruth,
}

impl SynthWorld {
    pub fn zone_of(&self, video_id: &str, frame: usize) -> Option<usize> {
        self.truth.frame_zone.get(video_id).and_then(|z| z.get(frame)).copied()
    }

    pub fn type_of(&self, video_id: &str, frame: usize) -> Option<usize> {
        self.zone_of(video_id, frame).map(|z| self.truth.zone_type[z])
    }
}

pub fn video_name(env: usize, index: usize) -> String {
    format!("k{env:02}_v{index:03}")
}

/// Generate every environment and its videos. The last
/// `test_videos_per_environment` videos of each kitchen form the test split.
pub fn generate_world(cfg: &SynthConfig, exec: Exec) -> Result<SynthWorld> {
    let zones = generate_environments(cfg)?;
    let vocab = vocabulary(cfg)?;
    let transition = cfg.transition.clone().unwrap_or_else(|| default_transition(cfg.n_zones));
    let jobs: Vec<(usize, usize)> = (0..cfg.n_environments)
        .flat_map(|e| (0..cfg.videos_per_environment).map(move |v| (e, v)))
        .collect();
    let weights = |z: usize| zones[z].interaction_weights.clone();
    let videos = exec.map(&jobs, |&(env, v)| {
        let mut rng = rng_stream(cfg.seed, 1000 + (env * cfg.videos_per_environment + v) as u64);
        let env_zones = &zones[env * cfg.n_zones..(env + 1) * cfg.n_zones];
        generate_video(&video_name(env, v), env_zones, &transition, None, cfg, &weights, &vocab, &mut rng)
    });
    assemble(cfg, zones, vocab, &jobs, videos, BTreeMap::new())
}

fn assemble(
    cfg: &SynthConfig,
    zones: Vec<ZoneSpec>,
    vocab: InteractionVocab,
    jobs: &[(usize, usize)],
    videos: Vec<Result<SynthVideo>>,
    video_task: BTreeMap<String, usize>,
) -> Result<SynthWorld> {
    let mut mats = Vec::new();
    let mut anns = Vec::new();
    let mut frame_zone = BTreeMap::new();
    let mut kitchen_of = BTreeMap::new();
    let mut split_of = BTreeMap::new();
    let first_test = cfg.videos_per_environment - cfg.test_videos_per_environment;
    for (&(env, v), video) in jobs.iter().zip(videos) {
        let video = video?;
        let id = video.embeddings.video_id.clone();
        kitchen_of.insert(id.clone(), format!("k{env:02}"));
        split_of.insert(id.clone(), if v >= first_test { Split::Test } else { Split::Train });
        frame_zone.insert(id, video.frame_zone);
        anns.extend(video.clips);
        mats.push(video.embeddings);
    }
    let truth = GroundTruth {
        frame_zone,
        zone_affordances: zones
            .iter()
            .map(|z| (z.zone_id, type_affordances(cfg, z.zone_type)))
            .collect(),
        zone_type: zones.iter().map(|z| z.zone_type).collect(),
        zone_environment: zones.iter().map(|z| z.environment).collect(),
        video_task,
    };
    Ok(SynthWorld {
        dataset: Dataset::new(mats, anns, vocab, kitchen_of, split_of)?,
        zones,
        truth,
    })
}

/// Long-horizon anticipation benchmark: one kitchen whose zones are walked
/// along a task-specific layout. Every task visits the same zones, but the
/// layouts (star, cycle, path, ...) connect them differently, and each
/// zone hosts a task-specific verb besides its shared one. What happens
/// later in a video is therefore predictable from how zones are connected
/// in the observed part, not from which zones were seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkovBenchConfig {
    pub n_zones: usize,
    pub n_tasks: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_scale: f64,
    pub dwell_mean: f64,
    pub active_object_noise: f64,
    pub active_object_fraction: f64,
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames_per_video: usize,
    /// Probability that a clip uses the task-specific verb of its zone.
    pub task_verb_prob: f64,
    pub seed: u64,
}

impl Default for MarkovBenchConfig {
    fn default() -> Self {
        Self {
            n_zones: 4,
            n_tasks: 3,
            dim: 16,
            separation: 10.0,
            noise_scale: 1.0,
            dwell_mean: 25.0,
            active_object_noise: 2.0,
            active_object_fraction: 0.2,
            train_videos: 120,
            test_videos: 60,
            frames_per_video: 400,
            task_verb_prob: 0.5,
            seed: 0,
        }
    }
}

/// Task layouts over `n` zones: task 0 is a star around zone 0, task 1 the
/// cycle 0-1-..-(n-1)-0, task 2 the path 0-1-..-(n-1); further tasks are
/// stars around zone `t - 2`.
pub fn task_layout(task: usize, n: usize) -> Vec<(usize, usize)> {
    match task {
        1 => (0..n).map(|i| (i, (i + 1) % n)).filter(|(a, b)| a != b).collect(),
        2 => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        t => {
            let hub = if t == 0 { 0 } else { (t - 2) % n };
            (0..n).filter(|&i| i != hub).map(|i| (hub, i)).collect()
        }
    }
}

/// Uniform random walk over an undirected layout.
pub fn layout_transition(edges: &[(usize, usize)], n: usize) -> Vec<Vec<f64>> {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    adj.iter()
        .enumerate()
        .map(|(i, row)| {
            let deg = row.iter().filter(|&&x| x).count();
            if deg == 0 {
                (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
            } else {
                row.iter().map(|&x| if x { 1.0 / deg as f64 } else { 0.0 }).collect()
            }
        })
        .collect()
}

impl MarkovBenchConfig {
    fn as_synth(&self) -> SynthConfig {
        SynthConfig {
            n_zones: self.n_zones,
            n_environments: 1,
            dim: self.dim,
            separation: self.separation,
            noise_scale: self.noise_scale,
            dwell_mean: self.dwell_mean,
            transition: None,
            active_object_noise: self.active_object_noise,
            active_object_fraction: self.active_object_fraction,
            videos_per_environment: self.train_videos + self.test_videos,
            test_videos_per_environment: self.test_videos,
            frames_per_video: self.frames_per_video,
            // verbs: one shared per zone, then one per (task, zone)
            verbs_per_type: 1 + self.n_tasks,
            nouns_per_type: 1,
            rare_per_type: 0,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_zones < 3 || self.n_tasks == 0 {
            return Err(Error::Config("the benchmark needs at least 3 zones and one task".into()));
        }
        if !(0.0..=1.0).contains(&self.task_verb_prob) {
            return Err(Error::Config("task_verb_prob must lie in [0, 1]".into()));
        }
        if self.train_videos == 0 || self.test_videos == 0 {
            return Err(Error::Config("train_videos and test_videos must be positive".into()));
        }
        self.as_synth().validate()
    }
}

pub fn generate_markov_benchmark(cfg: &MarkovBenchConfig, exec: Exec) -> Result<SynthWorld> {
    cfg.validate()?;
    let scfg = cfg.as_synth();
    let zones = generate_environments(&scfg)?;
    let vocab = vocabulary(&scfg)?;
    let total = cfg.train_videos + cfg.test_videos;
    // balanced, shuffled task assignment within each split
    let mut rng = rng_stream(cfg.seed, 3);
    let mut tasks: Vec<usize> = Vec::with_capacity(total);
    for count in [cfg.train_videos, cfg.test_videos] {
        let mut t: Vec<usize> = (0..count).map(|i| i % cfg.n_tasks).collect();
        t.shuffle(&mut rng);
        tasks.extend(t);
    }
    let ipt = scfg.interactions_per_type();
    let n_inter = vocab.num_interactions();
    let jobs: Vec<(usize, usize)> = (0..total).map(|v| (0, v)).collect();
    let videos = exec.map(&jobs, |&(_, v)| {
        let task = tasks[v];
        let transition = layout_transition(&task_layout(task, cfg.n_zones), cfg.n_zones);
        let weights = move |z: usize| {
            let mut w = vec![0.0; n_inter];
            w[z * ipt] = 1.0 - cfg.task_verb_prob;
            w[z * ipt + 1 + task] = cfg.task_verb_prob;
            w
        };
        let mut rng = rng_stream(cfg.seed, 1000 + v as u64);
        generate_video(&video_name(0, v), &zones, &transition, None, &scfg, &weights, &vocab, &mut rng)
    });
    let video_task = (0..total).map(|v| (video_name(0, v), tasks[v])).collect();
    assemble(&scfg, zones, vocab, &jobs, videos, video_task)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_zones: 3,
            dim: 8,
            videos_per_environment: 2,
            frames_per_video: 300,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn single_zone_needs_no_separation() {
        let cfg = SynthConfig {
            n_zones: 1,
            dim: 1,
            separation: 1e6,
            ..small()
        };
        assert_eq!(generate_environments(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn centroids_respect_separation() {
        let cfg = SynthConfig {
            n_zones: 6,
            ..SynthConfig::default()
        };
        let zones = generate_environments(&cfg).unwrap();
        for a in &zones {
            for b in &zones {
                if a.zone_id < b.zone_id {
                    assert!(dist(&a.centroid, &b.centroid) >= 10.0);
                }
            }
        }
    }

    #[test]
    fn infeasible_separation_errors() {
        let cfg = SynthConfig {
            n_zones: 50,
            dim: 1,
            separation: 10.0,
            ..small()
        };
        assert!(matches!(generate_environments(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_noise_frames_equal_centroids() {
        let cfg = SynthConfig {
            noise_scale: 0.0,
            separation: 1.0,
            active_object_noise: 0.0,
            ..small()
        };
        let w = generate_world(&cfg, Exec::Sequential).unwrap();
        for (id, m) in &w.dataset.videos {
            for (t, &z) in w.truth.frame_zone[id].iter().enumerate() {
                let c: Vec<f32> = w.zones[z].centroid.iter().map(|&x| x as f32).collect();
                assert_eq!(m.row(t), c.as_slice());
            }
        }
    }

    #[test]
    fn clips_lie_within_single_dwells() {
        let w = generate_world(&small(), Exec::Sequential).unwrap();
        assert!(!w.dataset.annotations.is_empty());
        for c in &w.dataset.annotations {
            let fz = &w.truth.frame_zone[&c.video_id];
            let z = fz[c.start_frame];
            assert!(fz[c.start_frame..=c.stop_frame].iter().all(|&x| x == z));
            let k = w.dataset.vocab.interaction_of(c).unwrap();
            assert!(w.zones[z].affordance_set.contains(&k));
        }
    }

    #[test]
    fn generation_is_reproducible_and_order_free() {
        let a = generate_world(&small(), Exec::Sequential).unwrap();
        let b = generate_world(&small(), Exec::Parallel).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.dataset.annotations, b.dataset.annotations);
        for (id, m) in &a.dataset.videos {
            assert_eq!(m.as_slice(), b.dataset.videos[id].as_slice());
        }
        let c = generate_world(&SynthConfig { seed: 9, ..small() }, Exec::Sequential).unwrap();
        assert_ne!(a.truth.frame_zone, c.truth.frame_zone);
    }

    #[test]
    fn rare_interactions_live_in_one_kitchen() {
        let cfg = SynthConfig {
            n_zones: 2,
            n_environments: 3,
            verbs_per_type: 2,
            nouns_per_type: 2,
            rare_per_type: 2,
            ..small()
        };
        let zones = generate_environments(&cfg).unwrap();
        for ty in 0..2 {
            for r in 0..2 {
                let k = ty * 4 + 2 + r;
                assert!(cfg.is_rare(k));
                let homes: Vec<usize> = zones
                    .iter()
                    .filter(|z| z.interaction_weights[k] > 0.0)
                    .map(|z| z.environment)
                    .collect();
                assert_eq!(homes, vec![cfg.rare_home(ty, r)]);
            }
        }
    }

    #[test]
    fn visitation_matches_stationary_distribution() {
        let t = vec![vec![0.0, 0.7, 0.3], vec![0.5, 0.0, 0.5], vec![0.9, 0.1, 0.0]];
        let pi = stationary_distribution(&t);
        // direct check of pi T = pi
        for j in 0..3 {
            let s: f64 = (0..3).map(|i| pi[i] * t[i][j]).sum();
            assert!((s - pi[j]).abs() < 1e-9);
        }
        let cfg = SynthConfig {
            n_zones: 3,
            dim: 2,
            separation: 1.0,
            dwell_mean: 20.0,
            frames_per_video: 100_000,
            videos_per_environment: 1,
            transition: Some(t.clone()),
            ..SynthConfig::default()
        };
        let zones = generate_environments(&cfg).unwrap();
        let vocab = vocabulary(&cfg).unwrap();
        let w = |_: usize| vec![0.0; vocab.num_interactions()];
        let mut rng = rng_stream(5, 0);
        let v = generate_video("v", &zones, &t, None, &cfg, &w, &vocab, &mut rng).unwrap();
        // equal mean dwell per zone, so time share follows the visit chain
        let mut counts = [0.0f64; 3];
        for &z in &v.frame_zone {
            counts[z] += 1.0;
        }
        let tv: f64 = counts.iter().zip(&pi).map(|(c, p)| (c / 1e5 - p).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn layouts_have_expected_degrees() {
        let deg = |edges: &[(usize, usize)]| {
            let mut d = vec![0; 4];
            for &(a, b) in edges {
                d[a] += 1;
                d[b] += 1;
            }
            d
        };
        assert_eq!(deg(&task_layout(0, 4)), vec![3, 1, 1, 1]);
        assert_eq!(deg(&task_layout(1, 4)), vec![2, 2, 2, 2]);
        assert_eq!(deg(&task_layout(2, 4)), vec![1, 2, 2, 1]);
        let t = layout_transition(&task_layout(2, 4), 4);
        assert_eq!(t[0], vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(t[1], vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn markov_benchmark_tasks_are_balanced() {
        let cfg = MarkovBenchConfig {
            train_videos: 6,
            test_videos: 3,
            frames_per_video: 100,
            ..MarkovBenchConfig::default()
        };
        let w = generate_markov_benchmark(&cfg, Exec::Sequential).unwrap();
        let mut per = [0; 3];
        for (id, &t) in &w.truth.video_task {
            if w.dataset.split(id) == Split::Train {
                per[t] += 1;
            }
        }
        assert_eq!(per, [2, 2, 2]);
        assert_eq!(w.dataset.video_ids(Split::Test).len(), 3);
    }
}
