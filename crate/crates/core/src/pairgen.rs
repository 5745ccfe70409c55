//! Training pairs for the zone-similarity scorer.
//!
//! Two frames are *similar* when they are close in time, fall in the same
//! action clip, or share a planar homography with enough inlier keypoints.
//! They are *dissimilar* when far apart in time with low feature
//! similarity, or when one of them is an incidental view outside every
//! annotated clip.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClipAnnotation, Dataset, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::par::{rng_stream, Exec};

pub type Point = [f64; 2];

/// Matched keypoints between two frames of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondences {
    pub video_id: String,
    pub frame_a: usize,
    pub frame_b: usize,
    pub points_a: Vec<Point>,
    pub points_b: Vec<Point>,
}

impl Correspondences {
    pub fn validate(&self) -> Result<()> {
        if self.points_a.len() != self.points_b.len() {
            return Err(Error::InvalidInput(format!(
                "correspondence lists differ in length ({} vs {})",
                self.points_a.len(),
                self.points_b.len()
            )));
        }
        if self.points_a.iter().chain(&self.points_b).flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite keypoint coordinate".into()));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self {
            video_id: self.video_id.clone(),
            frame_a: self.frame_b,
            frame_b: self.frame_a,
            points_a: self.points_b.clone(),
            points_b: self.points_a.clone(),
        }
    }
}

/// Planar projective map with `h[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub h: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self { h: Matrix3::identity() }
    }

    pub fn from_matrix(h: Matrix3<f64>) -> Result<Self> {
        let s = h[(2, 2)];
        if !s.is_finite() || s.abs() < 1e-12 {
            return Err(Error::Degenerate("homography with vanishing h33".into()));
        }
        let h = h / s;
        if !h.iter().all(|v| v.is_finite()) || h.determinant().abs() <= 1e-12 {
            return Err(Error::Degenerate("singular homography".into()));
        }
        Ok(Self { h })
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.h * Vector3::new(p[0], p[1], 1.0);
        if v.z.abs() < 1e-300 {
            return [f64::INFINITY, f64::INFINITY];
        }
        [v.x / v.z, v.y / v.z]
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .h
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("non-invertible homography".into()))?;
        Self::from_matrix(inv)
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Similarity transform moving the centroid to the origin and the mean
/// distance to sqrt(2).
fn normalizer(pts: &[Point]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = pts.iter().map(|p| dist(*p, [cx, cy])).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: Point) -> Point {
    [t[(0, 0)] * p[0] + t[(0, 2)], t[(1, 1)] * p[1] + t[(1, 2)]]
}

fn check_general_position(pts: &[Point; 4], which: &str) -> Result<()> {
    let scale = pts
        .iter()
        .flat_map(|p| pts.iter().map(move |q| dist(*p, *q)))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Degenerate(format!("{which}: duplicate points")));
    }
    for i in 0..4 {
        for j in i + 1..4 {
            for k in j + 1..4 {
                if cross(pts[i], pts[j], pts[k]).abs() <= 1e-9 * scale * scale {
                    return Err(Error::Degenerate(format!("{which}: three collinear points")));
                }
            }
        }
    }
    Ok(())
}

/// Exact homography through four correspondences (normalised DLT with
/// `h33 = 1`).
pub fn dlt_homography(pts_a: &[Point; 4], pts_b: &[Point; 4]) -> Result<Homography> {
    check_general_position(pts_a, "source")?;
    check_general_position(pts_b, "target")?;
    let ta = normalizer(pts_a);
    let tb = normalizer(pts_b);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut rhs = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [x, y] = transform(&ta, pts_a[i]);
        let [u, v] = transform(&tb, pts_b[i]);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        rhs[r] = u;
        rhs[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular DLT system".into()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let tb_inv = tb.try_inverse().expect("similarity transform is invertible");
    Homography::from_matrix(tb_inv * hn * ta)
}

/// Least-squares homography over `n >= 4` correspondences (normalised DLT,
/// smallest singular vector).
pub fn fit_homography(pts_a: &[Point], pts_b: &[Point]) -> Result<Homography> {
    if pts_a.len() < 4 || pts_a.len() != pts_b.len() {
        return Err(Error::InsufficientMatches(pts_a.len().min(pts_b.len())));
    }
    let ta = normalizer(pts_a);
    let tb = normalizer(pts_b);
    let rows = (2 * pts_a.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&pa, &pb)) in pts_a.iter().zip(pts_b).enumerate() {
        let [x, y] = transform(&ta, pa);
        let [u, v] = transform(&tb, pb);
        let r = 2 * i;
        for (c, val) in [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u].into_iter().enumerate() {
            a[(r, c)] = val;
        }
        for (c, val) in [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v].into_iter().enumerate() {
            a[(r + 1, c)] = val;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nine singular values");
    let h = v_t.row(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tb_inv = tb.try_inverse().expect("similarity transform is invertible");
    Homography::from_matrix(tb_inv * hn * ta)
}

/// Symmetric transfer error: the larger of the forward and backward
/// reprojection distances.
pub fn transfer_error(h: &Homography, h_inv: &Homography, a: Point, b: Point) -> f64 {
    dist(h.apply(a), b).max(dist(h_inv.apply(b), a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub homography: Homography,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
}

fn score(h: &Homography, c: &Correspondences, px: f64) -> Option<(Vec<bool>, f64)> {
    let inv = h.inverse().ok()?;
    let mut err_sum = 0.0;
    let mask = c
        .points_a
        .iter()
        .zip(&c.points_b)
        .map(|(&a, &b)| {
            let e = transfer_error(h, &inv, a, b);
            let inlier = e <= px;
            if inlier {
                err_sum += e;
            }
            inlier
        })
        .collect();
    Some((mask, err_sum))
}

/// RANSAC over random 4-point samples, keeping the hypothesis with the
/// most inliers (ties: lower summed error), then refitting on its inliers
/// when that does not lose any.
pub fn ransac_homography(c: &Correspondences, cfg: &PairGenConfig) -> Result<RansacResult> {
    c.validate()?;
    let n = c.points_a.len();
    if n < 4 {
        return Err(Error::InsufficientMatches(n));
    }
    let mut rng = rng_stream(cfg.seed, 0x4841_4e53);
    let mut best: Option<(Homography, Vec<bool>, usize, f64)> = None;
    for _ in 0..cfg.ransac_iters {
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let pa = [0, 1, 2, 3].map(|k| c.points_a[idx.index(k)]);
        let pb = [0, 1, 2, 3].map(|k| c.points_b[idx.index(k)]);
        let Ok(h) = dlt_homography(&pa, &pb) else { continue };
        let Some((mask, err)) = score(&h, c, cfg.inlier_px) else { continue };
        let count = mask.iter().filter(|&&m| m).count();
        let better = match &best {
            None => true,
            Some((_, _, bc, be)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((h, mask, count, err));
        }
    }
    let (mut h, mut mask, mut count, _) =
        best.ok_or_else(|| Error::Degenerate("every 4-point sample was degenerate".into()))?;
    if count >= 4 {
        let (ia, ib): (Vec<Point>, Vec<Point>) = mask
            .iter()
            .zip(c.points_a.iter().zip(&c.points_b))
            .filter(|(m, _)| **m)
            .map(|(_, (a, b))| (*a, *b))
            .unzip();
        if let Ok(refit) = fit_homography(&ia, &ib) {
            if let Some((m2, _)) = score(&refit, c, cfg.inlier_px) {
                let c2 = m2.iter().filter(|&&m| m).count();
                if c2 >= count {
                    h = refit;
                    mask = m2;
                    count = c2;
                }
            }
        }
    }
    Ok(RansacResult {
        homography: h,
        inlier_mask: mask,
        inlier_count: count,
    })
}

/// Inlier counts for many frame pairs; pairs with fewer than four matches
/// count as zero inliers.
pub fn ransac_batch(corrs: &[Correspondences], cfg: &PairGenConfig, exec: Exec) -> Vec<usize> {
    exec.map(corrs, |c| ransac_homography(c, cfg).map_or(0, |r| r.inlier_count))
}

// ---------------------------------------------------------------------------
// pair sampling

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairReason {
    Temporal,
    SameClip,
    Homography,
    DistantDissimilar,
    NoAction,
}

impl PairReason {
    pub fn label(self) -> PairLabel {
        match self {
            PairReason::Temporal | PairReason::SameClip | PairReason::Homography => PairLabel::Similar,
            PairReason::DistantDissimilar | PairReason::NoAction => PairLabel::Dissimilar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairSample {
    pub video_id: String,
    pub frame_a: usize,
    pub frame_b: usize,
    pub label: PairLabel,
    pub reason: PairReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairGenConfig {
    /// Frames closer than this are similar.
    pub temporal_window: usize,
    /// Homography inliers needed for a similar pair.
    pub min_inliers: usize,
    pub ransac_iters: usize,
    /// Reprojection threshold in pixels.
    pub inlier_px: f64,
    /// Minimum frame gap for a distant dissimilar pair.
    pub dissim_min_gap: usize,
    /// Cosine ceiling for dissimilar pairs.
    pub dissim_max_feature_sim: f64,
    /// Random candidate pairs drawn per video before balancing.
    pub candidates_per_video: usize,
    pub seed: u64,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        Self {
            temporal_window: 15,
            min_inliers: 10,
            ransac_iters: 1000,
            inlier_px: 3.0,
            dissim_min_gap: 200,
            dissim_max_feature_sim: 0.5,
            candidates_per_video: 2000,
            seed: 0,
        }
    }
}

impl PairGenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.temporal_window > 0
            && self.min_inliers > 0
            && self.ransac_iters > 0
            && self.inlier_px > 0.0
            && self.dissim_min_gap > 0
            && self.dissim_max_feature_sim > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("pair generation thresholds must be positive".into()))
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Per-video view used to classify candidate frame pairs.
pub struct PairClassifier<'a> {
    video: &'a EmbeddingMatrix,
    clips: Vec<&'a ClipAnnotation>,
    in_clip: Vec<bool>,
    inliers: BTreeMap<(usize, usize), usize>,
    cfg: &'a PairGenConfig,
}

impl<'a> PairClassifier<'a> {
    pub fn new(
        video: &'a EmbeddingMatrix,
        clips: Vec<&'a ClipAnnotation>,
        inliers: BTreeMap<(usize, usize), usize>,
        cfg: &'a PairGenConfig,
    ) -> Self {
        let mut in_clip = vec![false; video.num_frames()];
        for c in &clips {
            in_clip[c.start_frame..=c.stop_frame].iter_mut().for_each(|f| *f = true);
        }
        Self {
            video,
            clips,
            in_clip,
            inliers,
            cfg,
        }
    }

    /// The qualifying reason for a pair, or `None` when it qualifies as
    /// neither. Similar criteria take precedence.
    pub fn classify(&self, a: usize, b: usize) -> Option<PairReason> {
        let (lo, hi) = (a.min(b), a.max(b));
        if lo == hi {
            return None;
        }
        let gap = hi - lo;
        if gap < self.cfg.temporal_window {
            return Some(PairReason::Temporal);
        }
        if self
            .clips
            .iter()
            .any(|c| c.start_frame <= lo && hi <= c.stop_frame)
        {
            return Some(PairReason::SameClip);
        }
        if self.inliers.get(&(lo, hi)).copied().unwrap_or(0) >= self.cfg.min_inliers {
            return Some(PairReason::Homography);
        }
        let sim = cosine(self.video.row(lo), self.video.row(hi));
        if sim > self.cfg.dissim_max_feature_sim {
            return None;
        }
        if gap >= self.cfg.dissim_min_gap {
            Some(PairReason::DistantDissimilar)
        } else if !self.in_clip[lo] || !self.in_clip[hi] {
            Some(PairReason::NoAction)
        } else {
            None
        }
    }

    fn candidates(&self, rng: &mut impl Rng, homography_pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let t = self.video.num_frames();
        let mut out: Vec<(usize, usize)> = homography_pairs.to_vec();
        if t < 2 {
            return out;
        }
        let idle: Vec<usize> = (0..t).filter(|&f| !self.in_clip[f]).collect();
        for i in 0..self.cfg.candidates_per_video {
            let pair = match i % 4 {
                0 => {
                    let a = rng.random_range(0..t);
                    let d = rng.random_range(1..self.cfg.temporal_window.max(2));
                    (a, (a + d).min(t - 1))
                }
                1 if !self.clips.is_empty() => {
                    let c = self.clips[rng.random_range(0..self.clips.len())];
                    (
                        rng.random_range(c.start_frame..=c.stop_frame),
                        rng.random_range(c.start_frame..=c.stop_frame),
                    )
                }
                3 if !idle.is_empty() => (idle[rng.random_range(0..idle.len())], rng.random_range(0..t)),
                _ => (rng.random_range(0..t), rng.random_range(0..t)),
            };
            out.push(pair);
        }
        out
    }
}

/// Sample labelled frame pairs from every video of `ds`, balanced between
/// similar and dissimilar by downsampling the majority class.
pub fn sample_pairs(ds: &Dataset, corrs: &[Correspondences], cfg: &PairGenConfig, exec: Exec) -> Result<Vec<PairSample>> {
    cfg.validate()?;
    for c in corrs {
        c.validate()?;
    }
    let inliers = ransac_batch(corrs, cfg, exec);
    let mut per_video: BTreeMap<&str, BTreeMap<(usize, usize), usize>> = BTreeMap::new();
    for (c, n) in corrs.iter().zip(inliers) {
        let key = (c.frame_a.min(c.frame_b), c.frame_a.max(c.frame_b));
        let slot = per_video.entry(c.video_id.as_str()).or_default().entry(key).or_insert(0);
        *slot = (*slot).max(n);
    }
    let ids: Vec<&String> = ds.videos.keys().collect();
    let per_video_pairs = exec.map_range(ids.len(), |vi| {
        let id = ids[vi];
        let video = &ds.videos[id];
        let inl = per_video.get(id.as_str()).cloned().unwrap_or_default();
        let hpairs: Vec<(usize, usize)> = inl.keys().copied().collect();
        let classifier = PairClassifier::new(video, ds.clips_of(id), inl, cfg);
        let mut rng = rng_stream(cfg.seed, vi as u64 + 1);
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (a, b) in classifier.candidates(&mut rng, &hpairs) {
            let key = (a.min(b), a.max(b));
            if key.0 == key.1 || key.1 >= video.num_frames() || !seen.insert(key) {
                continue;
            }
            if let Some(reason) = classifier.classify(key.0, key.1) {
                out.push(PairSample {
                    video_id: id.clone(),
                    frame_a: key.0,
                    frame_b: key.1,
                    label: reason.label(),
                    reason,
                });
            }
        }
        out
    });
    let (mut sim, mut dis): (Vec<_>, Vec<_>) = per_video_pairs
        .into_iter()
        .flatten()
        .partition(|p| p.label == PairLabel::Similar);
    let mut rng = rng_stream(cfg.seed, 0);
    let keep = sim.len().min(dis.len());
    sim.shuffle(&mut rng);
    dis.shuffle(&mut rng);
    sim.truncate(keep);
    dis.truncate(keep);
    let mut all: Vec<PairSample> = sim.into_iter().chain(dis).collect();
    all.sort();
    Ok(all)
}
