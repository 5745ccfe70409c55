//! Evaluation metrics: average precision, split mAP, clustering agreement.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

/// Average precision of one class: precision at the rank of every positive,
/// summed and divided by the number of positives. Items are ranked by
/// descending score; equal scores keep their input order. `None` when the
/// class has no positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

/// Class groups scored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub all_classes: Vec<usize>,
    pub freq_classes: Vec<usize>,
    pub rare_classes: Vec<usize>,
}

impl EvalSplit {
    pub const FREQ_MIN_EXCLUSIVE: usize = 100;
    pub const RARE_MAX_EXCLUSIVE: usize = 10;

    /// Frequent: more than 100 training instances; rare: fewer than 10.
    pub fn from_counts(train_counts: &[usize]) -> Self {
        let all: Vec<usize> = (0..train_counts.len()).collect();
        Self {
            freq_classes: all
                .iter()
                .copied()
                .filter(|&k| train_counts[k] > Self::FREQ_MIN_EXCLUSIVE)
                .collect(),
            rare_classes: all
                .iter()
                .copied()
                .filter(|&k| train_counts[k] < Self::RARE_MAX_EXCLUSIVE)
                .collect(),
            all_classes: all,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// `None` when no class of the split has a positive.
    pub all: Option<f64>,
    pub freq: Option<f64>,
    pub rare: Option<f64>,
    /// AP of every class with at least one positive.
    pub per_class: BTreeMap<usize, f64>,
}

/// mAP over the `all`, `freq` and `rare` class groups. `scores[i][k]` and
/// `gt[i][k]` are item `i`, class `k`. Classes without positives are left
/// out of every mean.
pub fn eval_map(scores: &[Vec<f64>], gt: &[Vec<bool>], split: &EvalSplit, exec: Exec) -> Result<MapReport> {
    if scores.len() != gt.len() {
        return Err(Error::DimMismatch {
            expected: gt.len(),
            found: scores.len(),
        });
    }
    let classes = gt.first().map_or(0, Vec::len);
    for (s, g) in scores.iter().zip(gt) {
        if s.len() != classes || g.len() != classes {
            return Err(Error::DimMismatch {
                expected: classes,
                found: s.len().max(g.len()),
            });
        }
    }
    if let Some(&k) = split.all_classes.iter().find(|&&k| k >= classes) {
        return Err(Error::InvalidInput(format!("split names class {k} of {classes}")));
    }
    let aps = exec.map_range(classes, |k| {
        let col: Vec<f64> = scores.iter().map(|s| s[k]).collect();
        let pos: Vec<bool> = gt.iter().map(|g| g[k]).collect();
        average_precision(&col, &pos)
    });
    let per_class: BTreeMap<usize, f64> = aps
        .iter()
        .enumerate()
        .filter_map(|(k, ap)| ap.map(|v| (k, v)))
        .collect();
    let mean = |ks: &[usize]| {
        let vals: Vec<f64> = ks.iter().filter_map(|k| per_class.get(k).copied()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(MapReport {
        all: mean(&split.all_classes),
        freq: mean(&split.freq_classes),
        rare: mean(&split.rare_classes),
        per_class,
    })
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sa: f64 = ra.values().map(|&c| comb2(c)).sum();
    let sb: f64 = rb.values().map(|&c| comb2(c)).sum();
    let expected = sa * sb / comb2(n);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Fraction of items whose cluster's majority truth label matches their own.
pub fn purity(clusters: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(clusters.len(), truth.len());
    if clusters.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &t) in clusters.iter().zip(truth) {
        *counts.entry(c).or_default().entry(t).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / clusters.len() as f64
}
