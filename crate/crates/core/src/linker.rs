//! Functional linking of zones across videos and environments.
//!
//! Each zone is summarised by the distribution of actions (verbs) and
//! active objects (nouns) observed during its visits. Zones are compared by
//! a symmetrised negative KL divergence and grouped by agglomerative
//! clustering that stops once the best remaining link falls below a
//! fraction of the mean pairwise similarity.
//!
//! Feeding graphs from a single environment gives a combined map of that
//! environment; feeding every environment gives the consolidated map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ClipAnnotation;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::topo::{escape_dot, TopoGraph, Visit};

pub const LINK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub video_id: String,
    pub node_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDistributions {
    pub node: NodeRef,
    /// Action distribution over verbs.
    pub a: Vec<f64>,
    /// Active-object distribution over nouns.
    pub o: Vec<f64>,
    pub epsilon: f64,
}

fn normalized_histogram(ids: impl Iterator<Item = usize>, bins: usize, eps: f64) -> Vec<f64> {
    let mut h = vec![eps; bins];
    for id in ids {
        h[id] += 1.0;
    }
    let total: f64 = h.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / bins as f64; bins];
    }
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// Annotations overlapping any of the given visits (each counted once).
pub fn overlapping_clips<'a>(
    visits: &'a [(String, Visit)],
    anns: &'a [ClipAnnotation],
) -> impl Iterator<Item = &'a ClipAnnotation> + 'a {
    anns.iter().filter(move |c| {
        visits
            .iter()
            .any(|(vid, v)| *vid == c.video_id && c.overlaps(v.start_frame, v.stop_frame))
    })
}

/// Verb and noun histograms of the clips overlapping `visits`, with `eps`
/// added to every bin before normalising. No clips and `eps == 0` gives
/// the uniform distribution.
pub fn distributions_for_visits(
    node: NodeRef,
    visits: &[(String, Visit)],
    anns: &[ClipAnnotation],
    num_verbs: usize,
    num_nouns: usize,
    eps: f64,
) -> NodeDistributions {
    let clips: Vec<&ClipAnnotation> = overlapping_clips(visits, anns).collect();
    NodeDistributions {
        node,
        a: normalized_histogram(clips.iter().map(|c| c.verb_id), num_verbs, eps),
        o: normalized_histogram(clips.iter().map(|c| c.noun_id), num_nouns, eps),
        epsilon: eps,
    }
}

pub fn node_distributions(
    graph: &TopoGraph,
    node_id: usize,
    anns: &[ClipAnnotation],
    num_verbs: usize,
    num_nouns: usize,
    eps: f64,
) -> NodeDistributions {
    let visits: Vec<(String, Visit)> = graph.nodes[node_id]
        .visits
        .iter()
        .map(|v| (graph.video_id.clone(), *v))
        .collect();
    distributions_for_visits(
        NodeRef {
            video_id: graph.video_id.clone(),
            node_id,
        },
        &visits,
        anns,
        num_verbs,
        num_nouns,
        eps,
    )
}

/// KL(p || q) in nats. Terms with `p_i == 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

fn check_dims(di: &NodeDistributions, dj: &NodeDistributions) -> Result<()> {
    for (x, y) in [(di.a.len(), dj.a.len()), (di.o.len(), dj.o.len())] {
        if x != y {
            return Err(Error::DimMismatch { expected: x, found: y });
        }
    }
    Ok(())
}

/// `-(KL(a_i||a_j) + KL(o_i||o_j)) / 2`, the node-level score as written,
/// which depends on argument order.
pub fn directed_similarity(di: &NodeDistributions, dj: &NodeDistributions) -> Result<f64> {
    check_dims(di, dj)?;
    Ok(-0.5 * (kl_divergence(&di.a, &dj.a) + kl_divergence(&di.o, &dj.o)))
}

/// Functional similarity used for linking: the directed score averaged
/// over both orders, so `s(i, j) == s(j, i)` exactly. Always `<= 0`, zero
/// for identical distributions.
pub fn functional_similarity(di: &NodeDistributions, dj: &NodeDistributions) -> Result<f64> {
    Ok(0.5 * (directed_similarity(di, dj)? + directed_similarity(dj, di)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    /// Stop merging below this fraction of the mean pairwise similarity.
    pub threshold_fraction: f64,
    pub linkage: Linkage,
    /// Additive smoothing of the action/object histograms.
    pub epsilon: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.4,
            linkage: Linkage::Average,
            epsilon: 1e-4,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "threshold_fraction must lie in (0, 1], got {}",
                self.threshold_fraction
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Flat clustering of distributions: `clusters[c]` lists indices into the
/// (sorted) input, each cluster sorted, clusters ordered by first member.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
    pub mean_similarity: f64,
    pub threshold: f64,
}

/// Pairwise functional similarity matrix.
pub fn similarity_matrix(dists: &[NodeDistributions], exec: Exec) -> Result<Vec<Vec<f64>>> {
    exec.map_range(dists.len(), |i| {
        (0..dists.len())
            .map(|j| functional_similarity(&dists[i], &dists[j]))
            .collect::<Result<Vec<f64>>>()
    })
    .into_iter()
    .collect()
}

/// Agglomerative clustering over `dists`, which must already be in
/// canonical order. Ties pick the pair with the lowest member indices.
pub fn cluster_distributions(dists: &[NodeDistributions], cfg: &LinkConfig, exec: Exec) -> Result<Clustering> {
    cfg.validate()?;
    let n = dists.len();
    let sim = similarity_matrix(dists, exec)?;
    let mut sum = 0.0;
    for (i, row) in sim.iter().enumerate() {
        sum += row[i + 1..].iter().sum::<f64>();
    }
    let pairs = n * n.saturating_sub(1) / 2;
    let mean = if pairs > 0 { sum / pairs as f64 } else { 0.0 };
    let threshold = cfg.threshold_fraction * mean;

    let mut csim = sim;
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                if best.is_none_or(|(_, _, b)| csim[i][j] > b) {
                    best = Some((i, j, csim[i][j]));
                }
            }
        }
        let Some((i, j, s)) = best else { break };
        if s < threshold {
            break;
        }
        let mj = members[j].take().unwrap();
        let (ni, nj) = (members[i].as_ref().unwrap().len() as f64, mj.len() as f64);
        for k in 0..n {
            if k == i || members[k].is_none() {
                continue;
            }
            let v = match cfg.linkage {
                Linkage::Average => (ni * csim[i][k] + nj * csim[j][k]) / (ni + nj),
                Linkage::Single => csim[i][k].max(csim[j][k]),
                Linkage::Complete => csim[i][k].min(csim[j][k]),
            };
            csim[i][k] = v;
            csim[k][i] = v;
        }
        let mi = members[i].as_mut().unwrap();
        mi.extend(mj);
        mi.sort_unstable();
    }
    Ok(Clustering {
        clusters: members.into_iter().flatten().collect(),
        mean_similarity: mean,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub members: Vec<NodeRef>,
    /// Union of the member nodes' visits.
    pub visits: Vec<(String, Visit)>,
    pub a: Vec<f64>,
    pub o: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidatedGraph {
    pub clusters: Vec<Cluster>,
    /// Member traversal counts mapped onto clusters, keyed `(from, to)`.
    pub edges: BTreeMap<(usize, usize), usize>,
    pub mean_similarity: f64,
    pub threshold: f64,
    index: BTreeMap<NodeRef, usize>,
}

impl ConsolidatedGraph {
    pub fn cluster_of(&self, video_id: &str, node_id: usize) -> Option<usize> {
        self.index
            .get(&NodeRef {
                video_id: video_id.to_string(),
                node_id,
            })
            .copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.index.len()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for c in &self.clusters {
            if c.members.is_empty() {
                return Err(Error::Invariant(format!("cluster {} is empty", c.id)));
            }
            for m in &c.members {
                if seen.insert(m.clone(), c.id).is_some() {
                    return Err(Error::Invariant(format!("node {m:?} in two clusters")));
                }
            }
        }
        if seen != self.index {
            return Err(Error::Invariant("cluster index out of sync".into()));
        }
        Ok(())
    }

    pub fn to_file(&self) -> ConsolidatedFile {
        ConsolidatedFile {
            schema_version: LINK_SCHEMA_VERSION,
            mean_similarity: self.mean_similarity,
            threshold: self.threshold,
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterFile {
                    id: c.id,
                    members: c.members.clone(),
                    visits: c
                        .visits
                        .iter()
                        .map(|(vid, v)| VisitFile {
                            video_id: vid.clone(),
                            start: v.start_frame,
                            stop: v.stop_frame,
                        })
                        .collect(),
                    a: c.a.clone(),
                    o: c.o.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(src, dst), &count)| crate::topo::GraphFileEdge { src, dst, count })
                .collect(),
        }
    }

    pub fn from_file(file: ConsolidatedFile) -> Result<Self> {
        if file.schema_version != LINK_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                what: "consolidated graph".into(),
                expected: LINK_SCHEMA_VERSION,
                found: file.schema_version,
            });
        }
        let clusters: Vec<Cluster> = file
            .clusters
            .into_iter()
            .map(|c| Cluster {
                id: c.id,
                members: c.members,
                visits: c
                    .visits
                    .into_iter()
                    .map(|v| {
                        (
                            v.video_id,
                            Visit {
                                start_frame: v.start,
                                stop_frame: v.stop,
                            },
                        )
                    })
                    .collect(),
                a: c.a,
                o: c.o,
            })
            .collect();
        let index = clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (m.clone(), c.id)))
            .collect();
        let g = Self {
            clusters,
            edges: file.edges.iter().map(|e| ((e.src, e.dst), e.count)).collect(),
            mean_similarity: file.mean_similarity,
            threshold: file.threshold,
            index,
        };
        g.check_invariants()?;
        Ok(g)
    }

    pub fn to_dot(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("graph \"consolidated\" {\n");
        for c in &self.clusters {
            let label = c
                .members
                .iter()
                .map(|m| format!("{}:{}", escape_dot(&m.video_id), m.node_id))
                .collect::<Vec<_>>()
                .join("\\n");
            let _ = writeln!(s, "  c{} [label=\"cluster {}\\n{}\"];", c.id, c.id, label);
        }
        let mut und: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (&(a, b), &n) in &self.edges {
            *und.entry((a.min(b), a.max(b))).or_default() += n;
        }
        for ((a, b), n) in und {
            let _ = writeln!(s, "  c{a} -- c{b} [label=\"{n}\"];");
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitFile {
    pub video_id: String,
    pub start: usize,
    pub stop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFile {
    pub id: usize,
    pub members: Vec<NodeRef>,
    pub visits: Vec<VisitFile>,
    pub a: Vec<f64>,
    pub o: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedFile {
    pub schema_version: u32,
    pub mean_similarity: f64,
    pub threshold: f64,
    pub clusters: Vec<ClusterFile>,
    pub edges: Vec<crate::topo::GraphFileEdge>,
}

/// Link the nodes of `graphs` using distributions from ground-truth
/// annotations.
pub fn link_nodes(
    graphs: &[TopoGraph],
    anns: &[ClipAnnotation],
    num_verbs: usize,
    num_nouns: usize,
    cfg: &LinkConfig,
    exec: Exec,
) -> Result<ConsolidatedGraph> {
    cfg.validate()?;
    let mut dists = Vec::new();
    for g in graphs {
        for n in &g.nodes {
            dists.push(node_distributions(g, n.node_id, anns, num_verbs, num_nouns, cfg.epsilon));
        }
    }
    link_nodes_with(graphs, dists, anns, num_verbs, num_nouns, cfg, exec)
}

/// Link with externally supplied per-node distributions (for example the
/// soft outputs of an action/object classifier). Every node of `graphs`
/// needs exactly one entry.
pub fn link_nodes_with(
    graphs: &[TopoGraph],
    mut dists: Vec<NodeDistributions>,
    anns: &[ClipAnnotation],
    num_verbs: usize,
    num_nouns: usize,
    cfg: &LinkConfig,
    exec: Exec,
) -> Result<ConsolidatedGraph> {
    if graphs.is_empty() {
        return Err(Error::InvalidInput("linking needs at least one graph".into()));
    }
    let by_video: BTreeMap<&str, &TopoGraph> = graphs.iter().map(|g| (g.video_id.as_str(), g)).collect();
    if by_video.len() != graphs.len() {
        return Err(Error::InvalidInput("duplicate video among graphs to link".into()));
    }
    dists.sort_by(|x, y| x.node.cmp(&y.node));
    let expected: Vec<NodeRef> = by_video
        .values()
        .flat_map(|g| {
            g.nodes.iter().map(|n| NodeRef {
                video_id: g.video_id.clone(),
                node_id: n.node_id,
            })
        })
        .collect();
    let got: Vec<NodeRef> = dists.iter().map(|d| d.node.clone()).collect();
    if got != expected {
        return Err(Error::InvalidInput("node distributions do not cover the graph nodes exactly".into()));
    }
    let clustering = cluster_distributions(&dists, cfg, exec)?;
    let mut index = BTreeMap::new();
    let mut clusters = Vec::with_capacity(clustering.clusters.len());
    for (cid, members) in clustering.clusters.iter().enumerate() {
        let refs: Vec<NodeRef> = members.iter().map(|&i| dists[i].node.clone()).collect();
        let mut visits = Vec::new();
        for r in &refs {
            index.insert(r.clone(), cid);
            for v in &by_video[r.video_id.as_str()].nodes[r.node_id].visits {
                visits.push((r.video_id.clone(), *v));
            }
        }
        visits.sort();
        let d = distributions_for_visits(refs[0].clone(), &visits, anns, num_verbs, num_nouns, cfg.epsilon);
        clusters.push(Cluster {
            id: cid,
            members: refs,
            visits,
            a: d.a,
            o: d.o,
        });
    }
    let mut edges = BTreeMap::new();
    for g in by_video.values() {
        for (&(a, b), &c) in &g.edges {
            let ca = index[&NodeRef {
                video_id: g.video_id.clone(),
                node_id: a,
            }];
            let cb = index[&NodeRef {
                video_id: g.video_id.clone(),
                node_id: b,
            }];
            if ca != cb {
                *edges.entry((ca, cb)).or_insert(0) += c;
            }
        }
    }
    let out = ConsolidatedGraph {
        clusters,
        edges,
        mean_similarity: clustering.mean_similarity,
        threshold: clustering.threshold,
        index,
    };
    out.check_invariants()?;
    Ok(out)
}
