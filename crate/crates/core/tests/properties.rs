use std::collections::BTreeMap;

use proptest::prelude::*;

use zonegraph::dataset::{subsample_fps, ClipAnnotation, EmbeddingMatrix};
use zonegraph::kmeans::{kmeans, nearest};
use zonegraph::linker::{cluster_distributions, functional_similarity, LinkConfig, Linkage, NodeDistributions, NodeRef};
use zonegraph::metrics::{adjusted_rand_index, average_precision, purity};
use zonegraph::topo::{assemble_graph, uniform_samples, BuilderConfig, FrameDecision, Visit};
use zonegraph::Exec;

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn dist_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, n).prop_map(normalize)
}

fn node(id: usize, a: Vec<f64>, o: Vec<f64>) -> NodeDistributions {
    NodeDistributions {
        node: NodeRef { video_id: format!("v{}", id / 4), node_id: id % 4 },
        a,
        o,
        epsilon: 0.0,
    }
}

/// Score schedule: one row of node scores per frame.
fn schedule() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..120).prop_flat_map(|n| prop::collection::vec(prop::collection::vec((0u8..=20).prop_map(|q| q as f64 / 20.0), n), n))
}

proptest! {
    #[test]
    fn graph_partitions_frames(table in schedule()) {
        let cfg = BuilderConfig::default();
        let n = table.len();
        let (g, trace) = assemble_graph("p", n, &cfg, |t, nodes| (0..nodes.len()).map(|j| table[t][j]).collect()).unwrap();
        g.check_invariants().unwrap();
        let owner = g.frame_assignment();
        let assigned = owner.iter().filter(|o| o.is_some()).count();
        prop_assert_eq!(assigned + g.ignored_frames.len(), n);
        prop_assert!(g.nodes.len() <= n);
        // one edge traversal per change of node between consecutive assigned frames
        let seq: Vec<usize> = owner.iter().flatten().copied().collect();
        let changes = seq.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(g.edges.values().sum::<usize>(), changes);
        let created = trace.iter().filter(|d| matches!(d, FrameDecision::Created { .. })).count();
        prop_assert_eq!(created + 1, g.nodes.len());
    }

    #[test]
    fn uniform_samples_in_visit(start in 0usize..1000, len in 1usize..200, k in 1usize..40) {
        let v = Visit { start_frame: start, stop_frame: start + len - 1 };
        let s = uniform_samples(&v, k);
        prop_assert_eq!(s.len(), len.min(k));
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.iter().all(|&f| v.contains(f)));
        if k >= 2 || len == 1 {
            prop_assert_eq!(s[0], v.start_frame);
            prop_assert_eq!(*s.last().unwrap(), v.stop_frame);
        }
    }

    #[test]
    fn similarity_symmetric_nonpositive(
        (ai, oi, aj, oj) in (1usize..8, 1usize..8)
            .prop_flat_map(|(na, no)| (dist_strategy(na), dist_strategy(no), dist_strategy(na), dist_strategy(no)))
    ) {
        let di = node(0, ai, oi);
        let dj = node(1, aj, oj);
        let s = functional_similarity(&di, &dj).unwrap();
        prop_assert_eq!(s, functional_similarity(&dj, &di).unwrap());
        prop_assert!(s <= 1e-15);
        prop_assert_eq!(functional_similarity(&di, &di).unwrap(), 0.0);
    }

    #[test]
    fn clustering_is_a_partition(
        dists in prop::collection::vec((dist_strategy(3), dist_strategy(3)), 1..12),
        frac in 0.01f64..=1.0,
        linkage in prop_oneof![Just(Linkage::Average), Just(Linkage::Single), Just(Linkage::Complete)],
    ) {
        let items: Vec<NodeDistributions> = dists.into_iter().enumerate().map(|(i, (a, o))| node(i, a, o)).collect();
        let cfg = LinkConfig { threshold_fraction: frac, linkage, ..LinkConfig::default() };
        let c = cluster_distributions(&items, &cfg, Exec::Sequential).unwrap();
        let mut seen: Vec<usize> = c.clusters.iter().flatten().copied().collect();
        seen.sort();
        prop_assert_eq!(seen, (0..items.len()).collect::<Vec<_>>());
        prop_assert!(c.clusters.iter().all(|m| !m.is_empty() && m.windows(2).all(|w| w[0] < w[1])));
        prop_assert!(c.clusters.windows(2).all(|w| w[0][0] < w[1][0]));
        let par = cluster_distributions(&items, &cfg, Exec::Parallel).unwrap();
        prop_assert_eq!(par, c);
    }

    #[test]
    fn ap_bounds(scores in prop::collection::vec(0.0f64..1.0, 1..30), bits in any::<u32>()) {
        let pos: Vec<bool> = (0..scores.len()).map(|i| bits >> (i % 32) & 1 == 1).collect();
        match average_precision(&scores, &pos) {
            None => prop_assert!(!pos.contains(&true)),
            Some(ap) => prop_assert!((0.0..=1.0 + 1e-12).contains(&ap)),
        }
        // scoring positives strictly above negatives is perfect
        let ideal: Vec<f64> = pos.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        if let Some(ap) = average_precision(&ideal, &pos) {
            prop_assert!((ap - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ari_and_purity_label_invariant(labels in prop::collection::vec(0usize..5, 2..60), shift in 1usize..7) {
        let relabelled: Vec<usize> = labels.iter().map(|&l| (l + shift) * 3).collect();
        prop_assert!((adjusted_rand_index(&labels, &relabelled) - 1.0).abs() < 1e-12 || labels.iter().all(|&l| l == labels[0]));
        prop_assert!((purity(&labels, &relabelled) - 1.0).abs() < 1e-12);
        let other: Vec<usize> = labels.iter().rev().copied().collect();
        let ab = adjusted_rand_index(&labels, &other);
        let ba = adjusted_rand_index(&other, &labels);
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn subsample_counts_and_order(n in 1usize..400, src in prop_oneof![Just(30.0f64), Just(25.0), Just(12.0), Just(6.0)], clips in prop::collection::vec((0usize..400, 0usize..40), 0..10)) {
        let m = EmbeddingMatrix::new("v", src, 2, (0..n * 2).map(|x| x as f32).collect()).unwrap();
        let (sub, remap) = subsample_fps(&m, 6.0).unwrap();
        let stride = (src / 6.0).round() as usize;
        prop_assert_eq!(sub.num_frames(), n.div_ceil(stride));
        for t in 0..sub.num_frames() {
            prop_assert_eq!(sub.row(t), m.row(t * stride));
        }
        for (s, l) in clips {
            let s = s.min(n - 1);
            let e = (s + l).min(n - 1);
            let c = remap.map_clip(&ClipAnnotation { video_id: "v".into(), start_frame: s, stop_frame: e, verb_id: 0, noun_id: 0 });
            prop_assert!(c.start_frame <= c.stop_frame);
            prop_assert!(c.stop_frame < sub.num_frames());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kmeans_fixed_point(points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 4..40), k in 1usize..4) {
        let km = kmeans(&points, k, 200, 1, Exec::Sequential).unwrap();
        prop_assert_eq!(km.centroids.len(), k);
        if km.iterations < 200 {
            // converged: every point sits with its nearest centroid
            for (p, &a) in points.iter().zip(&km.assignments) {
                prop_assert_eq!(nearest(&km.centroids, p), a);
            }
        }
        let mut counts = BTreeMap::new();
        for &a in &km.assignments {
            *counts.entry(a).or_insert(0) += 1;
        }
        prop_assert!(counts.keys().all(|&c| c < k));
    }
}
