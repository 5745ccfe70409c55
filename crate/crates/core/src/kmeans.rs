//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par::{rng_stream, Exec};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64, exec: Exec) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidInput(format!("k-means needs 1 <= k <= {} points, got k = {k}", points.len())));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let mut rng = rng_stream(seed, 0x4b4d);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        centroids.push(points[next].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }

    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let next = exec.map(points, |p| nearest(&centroids, p));
        let changed = next != assignments;
        assignments = next;
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let e = i as f64 * 0.01;
            pts.push(vec![e, 0.0]);
            pts.push(vec![10.0 + e, 10.0]);
        }
        let km = kmeans(&pts, 2, 50, 1, Exec::Sequential).unwrap();
        for i in 0..20 {
            assert_eq!(km.assignments[2 * i], km.assignments[0]);
            assert_eq!(km.assignments[2 * i + 1], km.assignments[1]);
        }
        assert_ne!(km.assignments[0], km.assignments[1]);
    }

    #[test]
    fn deterministic_across_exec() {
        let pts: Vec<Vec<f64>> = (0..100).map(|i| vec![(i * 37 % 101) as f64, (i * 11 % 7) as f64]).collect();
        let a = kmeans(&pts, 4, 100, 3, Exec::Sequential).unwrap();
        let b = kmeans(&pts, 4, 100, 3, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans(&[vec![0.0]], 2, 10, 0, Exec::Sequential).is_err());
    }
}
