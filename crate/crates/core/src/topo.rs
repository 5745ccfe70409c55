//! Per-video topological zone graphs.
//!
//! Frames are streamed once. Each frame is compared to every existing zone
//! node; a confident match joins the best node, a confident mismatch opens
//! a new node, and anything in between is ignored. Consecutive assignments
//! to different nodes record a traversal edge.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::{BuildHasherDefault, Hasher};

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::simnet::PairScorer;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

/// Inclusive frame interval spent in one zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Visit {
    pub start_frame: usize,
    pub stop_frame: usize,
}

impl Visit {
    pub fn single(frame: usize) -> Self {
        Self {
            start_frame: frame,
            stop_frame: frame,
        }
    }

    pub fn len(&self) -> usize {
        self.stop_frame - self.start_frame + 1
    }

    pub fn center(&self) -> usize {
        (self.start_frame + self.stop_frame) / 2
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start_frame <= frame && frame <= self.stop_frame
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneNode {
    pub node_id: usize,
    pub visits: Vec<Visit>,
    /// Frames representing each visit when scoring.
    pub sample_frames: Vec<Vec<usize>>,
}

impl ZoneNode {
    pub fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.visits.iter().flat_map(|v| v.start_frame..=v.stop_frame)
    }

    pub fn num_frames(&self) -> usize {
        self.visits.iter().map(Visit::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VisitRepr {
    /// Up to `frames_per_visit` evenly spaced frames per visit.
    #[default]
    Uniform,
    /// The center frame of each visit only.
    Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuilderConfig {
    /// Merge threshold on the best frame-to-node score.
    pub sigma: f64,
    /// A new node needs a best score below `sigma - margin`.
    pub margin: f64,
    /// Frames averaged around the query frame.
    pub score_window: usize,
    pub frames_per_visit: usize,
    pub visit_repr: VisitRepr,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            sigma: 0.7,
            margin: 0.3,
            score_window: 9,
            frames_per_visit: 20,
            visit_repr: VisitRepr::Uniform,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::Config(format!("sigma must lie in (0, 1], got {}", self.sigma)));
        }
        if !(self.margin > 0.0 && self.margin < self.sigma) {
            return Err(Error::Config(format!(
                "margin must lie in (0, sigma), got {}",
                self.margin
            )));
        }
        if self.score_window == 0 || self.frames_per_visit == 0 {
            return Err(Error::Config("score_window and frames_per_visit must be positive".into()));
        }
        Ok(())
    }

    fn samples(&self, v: &Visit) -> Vec<usize> {
        match self.visit_repr {
            VisitRepr::Center => vec![v.center()],
            VisitRepr::Uniform => uniform_samples(v, self.frames_per_visit),
        }
    }
}

/// `k` evenly spaced frames of `v` including both ends, or every frame when
/// the visit is shorter than `k`.
pub fn uniform_samples(v: &Visit, k: usize) -> Vec<usize> {
    let len = v.len();
    if len <= k {
        return (v.start_frame..=v.stop_frame).collect();
    }
    if k == 1 {
        return vec![v.center()];
    }
    (0..k).map(|i| v.start_frame + i * (len - 1) / (k - 1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoGraph {
    pub video_id: String,
    pub num_frames: usize,
    pub nodes: Vec<ZoneNode>,
    /// Directed traversal counts keyed by `(from, to)`.
    pub edges: BTreeMap<(usize, usize), usize>,
    pub ignored_frames: Vec<usize>,
}

impl TopoGraph {
    /// Traversal counts with direction dropped, keyed by `(min, max)`.
    pub fn undirected_edges(&self) -> BTreeMap<(usize, usize), usize> {
        let mut out = BTreeMap::new();
        for (&(a, b), &c) in &self.edges {
            *out.entry((a.min(b), a.max(b))).or_insert(0) += c;
        }
        out
    }

    /// Sorted neighbour lists, excluding the node itself.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in self.undirected_edges().keys() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj.iter_mut().for_each(|v| v.sort_unstable());
        adj
    }

    /// Node owning each frame; `None` for ignored frames.
    pub fn frame_assignment(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.num_frames];
        for n in &self.nodes {
            for f in n.frames() {
                if f < out.len() {
                    out[f] = Some(n.node_id);
                }
            }
        }
        out
    }

    /// Structural invariants: assigned and ignored frames partition the
    /// video, visits are disjoint and strictly increasing within a node, and
    /// edges join distinct existing nodes.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invariant(format!("graph {}: {m}", self.video_id)));
        let mut owner = vec![0u8; self.num_frames];
        for (i, n) in self.nodes.iter().enumerate() {
            if n.node_id != i {
                return fail(format!("node at position {i} has id {}", n.node_id));
            }
            if n.visits.is_empty() {
                return fail(format!("node {i} has no visits"));
            }
            if n.sample_frames.len() != n.visits.len() {
                return fail(format!("node {i} sample lists do not match its visits"));
            }
            for (k, v) in n.visits.iter().enumerate() {
                if v.start_frame > v.stop_frame || v.stop_frame >= self.num_frames {
                    return fail(format!("node {i} has invalid visit {v:?}"));
                }
                if k > 0 && n.visits[k - 1].stop_frame >= v.start_frame {
                    return fail(format!("node {i} visits out of order"));
                }
                if !n.sample_frames[k].iter().all(|&f| v.contains(f)) {
                    return fail(format!("node {i} samples outside visit {v:?}"));
                }
                for f in v.start_frame..=v.stop_frame {
                    owner[f] += 1;
                }
            }
        }
        for &f in &self.ignored_frames {
            if f >= self.num_frames {
                return fail(format!("ignored frame {f} out of range"));
            }
            owner[f] += 1;
        }
        if let Some(f) = owner.iter().position(|&c| c != 1) {
            return fail(format!("frame {f} covered {} times", owner[f]));
        }
        for &(a, b) in self.edges.keys() {
            if a == b {
                return fail(format!("self-loop on node {a}"));
            }
            if a >= self.nodes.len() || b >= self.nodes.len() {
                return fail(format!("edge ({a}, {b}) references a missing node"));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            schema_version: GRAPH_SCHEMA_VERSION,
            video_id: self.video_id.clone(),
            num_frames: self.num_frames,
            nodes: self
                .nodes
                .iter()
                .map(|n| GraphFileNode {
                    id: n.node_id,
                    visits: n.visits.iter().map(|v| [v.start_frame, v.stop_frame]).collect(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(src, dst), &count)| GraphFileEdge { src, dst, count })
                .collect(),
            ignored: self.ignored_frames.clone(),
        }
    }

    /// Rebuild from the export format; visit samples are recomputed with `cfg`.
    pub fn from_file(file: GraphFile, cfg: &BuilderConfig) -> Result<Self> {
        if file.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                what: "graph".into(),
                expected: GRAPH_SCHEMA_VERSION,
                found: file.schema_version,
            });
        }
        let nodes = file
            .nodes
            .into_iter()
            .map(|n| {
                let visits: Vec<Visit> = n
                    .visits
                    .iter()
                    .map(|&[s, e]| Visit {
                        start_frame: s,
                        stop_frame: e,
                    })
                    .collect();
                ZoneNode {
                    node_id: n.id,
                    sample_frames: visits.iter().map(|v| cfg.samples(v)).collect(),
                    visits,
                }
            })
            .collect();
        let graph = Self {
            video_id: file.video_id,
            num_frames: file.num_frames,
            nodes,
            edges: file.edges.iter().map(|e| ((e.src, e.dst), e.count)).collect(),
            ignored_frames: file.ignored,
        };
        graph.check_invariants()?;
        Ok(graph)
    }

    /// Graphviz export. Directed mode keeps traversal direction; undirected
    /// mode sums both directions. Pen width grows with traversal count.
    pub fn to_dot(&self, directed: bool) -> String {
        let (kw, arrow) = if directed { ("digraph", "->") } else { ("graph", "--") };
        let mut s = String::new();
        let _ = writeln!(s, "{kw} \"{}\" {{", escape_dot(&self.video_id));
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "  n{} [label=\"zone {}\\n{} visits, {} frames\"];",
                n.node_id,
                n.node_id,
                n.visits.len(),
                n.num_frames()
            );
        }
        let edges = if directed { self.edges.clone() } else { self.undirected_edges() };
        for ((a, b), c) in edges {
            let _ = writeln!(
                s,
                "  n{a} {arrow} n{b} [label=\"{c}\", penwidth={:.2}];",
                1.0 + (c as f64).ln_1p()
            );
        }
        s.push_str("}\n");
        s
    }
}

pub(crate) fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFileNode {
    pub id: usize,
    pub visits: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFileEdge {
    pub src: usize,
    pub dst: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub schema_version: u32,
    pub video_id: String,
    pub num_frames: usize,
    pub nodes: Vec<GraphFileNode>,
    pub edges: Vec<GraphFileEdge>,
    pub ignored: Vec<usize>,
}

/// Outcome for one frame of the stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameDecision {
    /// The first frame seeds node 0.
    Seed,
    Merged { node: usize, best: f64 },
    Created { node: usize, best: f64 },
    Ignored { best: f64 },
}

/// Core of graph construction, independent of how frame-to-node scores are
/// produced. `node_scores(t, nodes)` returns the score of frame `t` against
/// every node in order. Ties in the best score go to the lowest node id.
pub fn assemble_graph<F>(
    video_id: &str,
    num_frames: usize,
    cfg: &BuilderConfig,
    mut node_scores: F,
) -> Result<(TopoGraph, Vec<FrameDecision>)>
where
    F: FnMut(usize, &[ZoneNode]) -> Vec<f64>,
{
    cfg.validate()?;
    if num_frames == 0 {
        return Err(Error::InvalidInput(format!("video {video_id} has no frames")));
    }
    let first = Visit::single(0);
    let mut nodes = vec![ZoneNode {
        node_id: 0,
        visits: vec![first],
        sample_frames: vec![cfg.samples(&first)],
    }];
    let mut edges = BTreeMap::new();
    let mut ignored = Vec::new();
    let mut trace = Vec::with_capacity(num_frames);
    trace.push(FrameDecision::Seed);
    let mut last = 0usize;
    for t in 1..num_frames {
        let scores = node_scores(t, &nodes);
        debug_assert_eq!(scores.len(), nodes.len());
        let (arg, best) = scores
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        let current = if best > cfg.sigma {
            let node = &mut nodes[arg];
            let k = node.visits.len() - 1;
            if node.visits[k].stop_frame + 1 == t {
                node.visits[k].stop_frame = t;
                node.sample_frames[k] = cfg.samples(&node.visits[k]);
            } else {
                let v = Visit::single(t);
                node.visits.push(v);
                node.sample_frames.push(cfg.samples(&v));
            }
            trace.push(FrameDecision::Merged { node: arg, best });
            Some(arg)
        } else if best < cfg.sigma - cfg.margin {
            let id = nodes.len();
            let v = Visit::single(t);
            nodes.push(ZoneNode {
                node_id: id,
                visits: vec![v],
                sample_frames: vec![cfg.samples(&v)],
            });
            trace.push(FrameDecision::Created { node: id, best });
            Some(id)
        } else {
            ignored.push(t);
            trace.push(FrameDecision::Ignored { best });
            None
        };
        if let Some(cur) = current {
            if cur != last {
                *edges.entry((last, cur)).or_insert(0) += 1;
            }
            last = cur;
        }
    }
    Ok((
        TopoGraph {
            video_id: video_id.to_string(),
            num_frames,
            nodes,
            edges,
            ignored_frames: ignored,
        },
        trace,
    ))
}

#[derive(Default)]
struct PairHasher(u64);

impl Hasher for PairHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }

    fn write_u64(&mut self, n: u64) {
        self.0 = (self.0.rotate_left(5) ^ n).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }
}

/// Memo of pairwise frame scores for one video, keyed symmetrically.
#[derive(Default)]
pub struct ScoreMemo {
    map: HashMap<u64, f64, BuildHasherDefault<PairHasher>>,
}

impl ScoreMemo {
    fn get_or(&mut self, a: usize, b: usize, f: impl FnOnce() -> f64) -> f64 {
        let (lo, hi) = (a.min(b) as u64, a.max(b) as u64);
        *self.map.entry((lo << 32) | hi).or_insert_with(f)
    }
}

/// Average frame-level score of frame `t` against `node`: for each visit,
/// the mean score between the frames in a window around `t` (clipped to
/// the video) and the visit's sample frames; then the mean over visits.
pub fn frame_node_similarity(
    t: usize,
    node: &ZoneNode,
    video: &EmbeddingMatrix,
    scorer: &dyn PairScorer,
    cfg: &BuilderConfig,
    memo: Option<&mut ScoreMemo>,
) -> f64 {
    let half = cfg.score_window / 2;
    let lo = t.saturating_sub(half);
    let hi = (t + half).min(video.num_frames() - 1);
    let mut memo = memo;
    let mut total = 0.0;
    for samples in &node.sample_frames {
        let mut acc = 0.0;
        for w in lo..=hi {
            for &s in samples {
                let score = || scorer.score(video.row(w), video.row(s));
                acc += match memo.as_deref_mut() {
                    Some(m) => m.get_or(w, s, score),
                    None => score(),
                };
            }
        }
        total += acc / ((hi - lo + 1) * samples.len()) as f64;
    }
    total / node.sample_frames.len() as f64
}

/// Build the zone graph of one video.
pub fn build_graph(video: &EmbeddingMatrix, scorer: &dyn PairScorer, cfg: &BuilderConfig) -> Result<TopoGraph> {
    build_graph_traced(video, scorer, cfg).map(|(g, _)| g)
}

pub fn build_graph_traced(
    video: &EmbeddingMatrix,
    scorer: &dyn PairScorer,
    cfg: &BuilderConfig,
) -> Result<(TopoGraph, Vec<FrameDecision>)> {
    let mut memo = scorer.is_expensive().then(ScoreMemo::default);
    assemble_graph(&video.video_id, video.num_frames(), cfg, |t, nodes| {
        nodes
            .iter()
            .map(|n| frame_node_similarity(t, n, video, scorer, cfg, memo.as_mut()))
            .collect()
    })
}

/// Build graphs for many videos; each video is independent.
pub fn build_graphs(
    videos: &[&EmbeddingMatrix],
    scorer: &dyn PairScorer,
    cfg: &BuilderConfig,
    exec: Exec,
) -> Result<Vec<TopoGraph>> {
    exec.map(videos, |v| build_graph(v, scorer, cfg)).into_iter().collect()
}
