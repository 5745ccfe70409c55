//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use zonegraph::affordance::{
    self, evaluate_affordance, interaction_counts, observed_eval_items, train_affordance, training_set_for,
    zone_eval_items, AffordanceModel,
};
use zonegraph::anticipation::{
    self, build_samples, class_counts, evaluate_predictions, train_anticipation, train_dist, AnticipationModel,
    HORIZONS,
};
use zonegraph::checkpoint::Checkpoint;
use zonegraph::dataset::{load_dataset_with, read_jsonl, save_dataset, write_jsonl, Dataset, LoadOptions, Split};
use zonegraph::linker::{link_nodes, ConsolidatedFile, ConsolidatedGraph};
use zonegraph::metrics::{adjusted_rand_index, purity, EvalSplit};
use zonegraph::pairgen::{sample_pairs, Correspondences, PairSample};
use zonegraph::simnet::{self, train_similarity, CosineScorer, PairScorer, SimilarityModel};
use zonegraph::synth::{generate_markov_benchmark, generate_world, GroundTruth};
use zonegraph::topo::{build_graphs, GraphFile, TopoGraph};
use zonegraph::{Error, Exec};

use crate::config::{Benchmark, RunConfig, ScorerKind};
use crate::run::{files_under, RunDir};
use crate::CliError;

pub const GROUND_TRUTH: &str = "ground_truth.json";

fn data_err(msg: String) -> CliError {
    CliError::Core(Error::InvalidInput(msg))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|_| CliError::Core(Error::MissingFile(path.to_path_buf())))?;
    serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.data.manifest.clone().unwrap_or_else(|| cfg.out_dir.join("data/manifest.json"))
}

fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = manifest_path(cfg);
    let ds = load_dataset_with(&path, LoadOptions { target_fps: cfg.data.target_fps })?;
    info!("loaded {} videos, {} clips from {}", ds.videos.len(), ds.annotations.len(), path.display());
    Ok(ds)
}

/// Ground truth written next to the dataset manifest by `synth`, checked
/// against the loaded frame counts.
fn load_truth(cfg: &RunConfig, ds: &Dataset) -> Result<Option<GroundTruth>, CliError> {
    let path = manifest_path(cfg).with_file_name(GROUND_TRUTH);
    if !path.exists() {
        return Ok(None);
    }
    let gt: GroundTruth = read_json(&path)?;
    for (id, m) in &ds.videos {
        match gt.frame_zone.get(id) {
            Some(z) if z.len() == m.num_frames() => {}
            Some(z) => {
                return Err(data_err(format!(
                    "ground truth of {id} has {} frames, video has {}",
                    z.len(),
                    m.num_frames()
                )))
            }
            None => return Err(data_err(format!("ground truth lacks video {id}"))),
        }
    }
    Ok(Some(gt))
}

pub fn synth(cfg: &RunConfig, exec: Exec) -> Result<RunDir, CliError> {
    let mut run = RunDir::open(cfg, "synth")?;
    let world = match cfg.synth.benchmark {
        Benchmark::Kitchens => generate_world(&cfg.synth.kitchens, exec)?,
        Benchmark::Markov => generate_markov_benchmark(&cfg.synth.markov, exec)?,
    };
    let data = run.path("data");
    save_dataset(&world.dataset, &data)?;
    run.write_json(format!("data/{GROUND_TRUTH}"), &world.truth)?;
    run.write_json("data/zones.json", &world.zones)?;
    for f in files_under(&run.root, &data) {
        run.record(f);
    }
    info!(
        "generated {} videos, {} clips, {} zones",
        world.dataset.videos.len(),
        world.dataset.annotations.len(),
        world.zones.len()
    );
    Ok(run)
}

#[derive(Serialize)]
struct PairSummary {
    total: usize,
    by_reason: BTreeMap<String, usize>,
}

pub fn pairs(cfg: &RunConfig, correspondences: Option<&Path>, exec: Exec) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let mut run = RunDir::open(cfg, "pairs")?;
    let corrs: Vec<Correspondences> = match correspondences {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let pairs = sample_pairs(&ds, &corrs, &cfg.pairgen, exec)?;
    write_jsonl(&run.path("pairs.jsonl"), &pairs)?;
    run.record("pairs.jsonl");
    let mut by_reason = BTreeMap::new();
    for p in &pairs {
        *by_reason.entry(format!("{:?}", p.reason)).or_insert(0) += 1;
    }
    run.write_json("metrics/pairs.json", &PairSummary { total: pairs.len(), by_reason })?;
    info!("sampled {} pairs", pairs.len());
    Ok(run)
}

pub fn train_sim(cfg: &RunConfig) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let mut run = RunDir::open(cfg, "train-sim")?;
    let pairs: Vec<PairSample> = read_jsonl(&run.path("pairs.jsonl"))?;
    let (model, report) = train_similarity(&pairs, &ds, &cfg.simnet)?;
    model.to_checkpoint().save(&run.path("simnet.ckpt"), simnet::CHECKPOINT_KIND)?;
    run.record("simnet.ckpt");
    run.write_json("metrics/simnet.json", &report)?;
    info!(
        "trained similarity network on {} pairs, validation accuracy {:?}",
        report.num_train, report.val_accuracy
    );
    Ok(run)
}

fn scorer(cfg: &RunConfig) -> Result<Box<dyn PairScorer>, CliError> {
    Ok(match cfg.scorer {
        ScorerKind::Cosine => Box::new(CosineScorer::default()),
        ScorerKind::Simnet => {
            let ck = Checkpoint::load(&cfg.out_dir.join("simnet.ckpt"), simnet::CHECKPOINT_KIND)?;
            Box::new(SimilarityModel::from_checkpoint(ck)?)
        }
    })
}

#[derive(Serialize)]
struct GraphSummary {
    video_id: String,
    nodes: usize,
    edges: usize,
    ignored_frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    ari: Option<f64>,
}

pub fn build_graph(cfg: &RunConfig, exec: Exec) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let truth = load_truth(cfg, &ds)?;
    let scorer = scorer(cfg)?;
    let mut run = RunDir::open(cfg, "build-graph")?;
    let videos: Vec<_> = ds.videos.values().collect();
    let graphs = build_graphs(&videos, scorer.as_ref(), &cfg.builder, exec)?;
    let mut summary = Vec::new();
    for g in &graphs {
        g.check_invariants()?;
        run.write_json(format!("graphs/{}.json", g.video_id), &g.to_file())?;
        let ari = truth.as_ref().map(|t| {
            let fz = &t.frame_zone[&g.video_id];
            let (a, b): (Vec<usize>, Vec<usize>) = g
                .frame_assignment()
                .iter()
                .enumerate()
                .filter_map(|(f, n)| n.map(|n| (n, fz[f])))
                .unzip();
            adjusted_rand_index(&a, &b)
        });
        summary.push(GraphSummary {
            video_id: g.video_id.clone(),
            nodes: g.nodes.len(),
            edges: g.edges.len(),
            ignored_frames: g.ignored_frames.len(),
            ari,
        });
    }
    run.write_json("metrics/graphs.json", &summary)?;
    info!("built {} graphs", graphs.len());
    Ok(run)
}

/// Graphs written by `build-graph` for the videos of `split` (all when
/// `None`), in video order.
fn load_graphs(cfg: &RunConfig, ds: &Dataset, split: Option<Split>) -> Result<Vec<TopoGraph>, CliError> {
    let ids: Vec<String> = match split {
        Some(s) => ds.video_ids(s),
        None => ds.videos.keys().cloned().collect(),
    };
    let mut out = Vec::new();
    for id in ids {
        let file: GraphFile = read_json(&cfg.out_dir.join(format!("graphs/{id}.json")))?;
        let g = TopoGraph::from_file(file, &cfg.builder)?;
        if g.video_id != id || g.num_frames != ds.videos[&id].num_frames() {
            return Err(data_err(format!("graph file for {id} does not match the dataset")));
        }
        out.push(g);
    }
    Ok(out)
}

#[derive(Serialize)]
struct LinkSummary {
    nodes: usize,
    clusters: usize,
    mean_similarity: f64,
    threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    type_purity: Option<f64>,
}

pub fn link(cfg: &RunConfig, exec: Exec) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let truth = load_truth(cfg, &ds)?;
    let graphs = load_graphs(cfg, &ds, None)?;
    let mut run = RunDir::open(cfg, "link")?;
    let cg = link_nodes(&graphs, &ds.annotations, ds.vocab.num_verbs(), ds.vocab.num_nouns(), &cfg.link, exec)?;
    run.write_json("consolidated.json", &cg.to_file())?;
    let type_purity = truth.map(|t| {
        let (mut clusters, mut types) = (Vec::new(), Vec::new());
        for g in &graphs {
            let fz = &t.frame_zone[&g.video_id];
            for n in &g.nodes {
                let mut count: BTreeMap<usize, usize> = BTreeMap::new();
                for f in n.frames() {
                    *count.entry(t.zone_type[fz[f]]).or_default() += 1;
                }
                let majority = count.iter().max_by_key(|&(ty, c)| (*c, std::cmp::Reverse(*ty))).map_or(0, |(ty, _)| *ty);
                clusters.push(cg.cluster_of(&g.video_id, n.node_id).unwrap_or(usize::MAX));
                types.push(majority);
            }
        }
        purity(&clusters, &types)
    });
    run.write_json(
        "metrics/link.json",
        &LinkSummary {
            nodes: cg.num_nodes(),
            clusters: cg.clusters.len(),
            mean_similarity: cg.mean_similarity,
            threshold: cg.threshold,
            type_purity,
        },
    )?;
    info!("linked {} nodes into {} clusters", cg.num_nodes(), cg.clusters.len());
    Ok(run)
}

fn affordance_ckpt(cfg: &RunConfig) -> String {
    format!("affordance_{}.ckpt", cfg.affordance.variant)
}

fn fit_affordance(cfg: &RunConfig, ds: &Dataset, run: &mut RunDir, exec: Exec) -> Result<AffordanceModel, CliError> {
    let graphs = load_graphs(cfg, ds, Some(Split::Train))?;
    let v = cfg.affordance.variant;
    let samples = training_set_for(v, &graphs, ds, &cfg.link, cfg.affordance.train.seed, exec)?;
    let (model, history) = train_affordance(&samples, ds, &cfg.affordance.train)?;
    model.to_checkpoint().save(&run.path(affordance_ckpt(cfg)), affordance::CHECKPOINT_KIND)?;
    run.record(affordance_ckpt(cfg));
    run.write_json(
        format!("metrics/affordance_{v}_train.json"),
        &serde_json::json!({ "variant": v, "samples": samples.len(), "epoch_losses": history }),
    )?;
    info!("trained affordance model ({v}) on {} samples", samples.len());
    Ok(model)
}

pub fn train_affordance_stage(cfg: &RunConfig, exec: Exec) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let mut run = RunDir::open(cfg, "train-affordance")?;
    fit_affordance(cfg, &ds, &mut run, exec)?;
    Ok(run)
}

/// Evaluates the checkpoint of the configured variant, training it first
/// when the run has none. Test frames are labelled from zone ground truth
/// when present, otherwise from the interactions observed in test graphs.
pub fn eval_affordance(cfg: &RunConfig, exec: Exec) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let truth = load_truth(cfg, &ds)?;
    let mut run = RunDir::open(cfg, "eval-affordance")?;
    let ckpt = run.path(affordance_ckpt(cfg));
    let model = if ckpt.exists() {
        AffordanceModel::from_checkpoint(Checkpoint::load(&ckpt, affordance::CHECKPOINT_KIND)?)?
    } else {
        warn!("no {} in the run directory, training it first", affordance_ckpt(cfg));
        fit_affordance(cfg, &ds, &mut run, exec)?
    };
    let items = match &truth {
        Some(t) => zone_eval_items(&ds, &t.frame_zone, &t.zone_affordances, cfg.affordance.eval_stride)?,
        None => observed_eval_items(&load_graphs(cfg, &ds, Some(Split::Test))?, &ds),
    };
    if items.is_empty() {
        return Err(data_err("no test frames to evaluate; the dataset has no test videos".into()));
    }
    let split = EvalSplit::from_counts(&interaction_counts(&ds, &ds.video_ids(Split::Train)));
    let (report, preds) = evaluate_affordance(&model, &items, &ds, &split, exec)?;
    let v = cfg.affordance.variant;
    write_jsonl(&run.path(format!("predictions/affordance_{v}.jsonl")), &preds)?;
    run.record(format!("predictions/affordance_{v}.jsonl"));
    run.write_json(
        format!("metrics/affordance_{v}.json"),
        &serde_json::json!({
            "variant": v,
            "labels": if truth.is_some() { "zone_ground_truth" } else { "observed" },
            "items": items.len(),
            "map": report,
        }),
    )?;
    info!("affordance mAP ({v}): all {:?} freq {:?} rare {:?}", report.all, report.freq, report.rare);
    Ok(run)
}

pub fn train_anticipation_stage(cfg: &RunConfig, exec: Exec) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let scorer = scorer(cfg)?;
    let mut run = RunDir::open(cfg, "train-anticipation")?;
    let ids = ds.video_ids(Split::Train);
    let samples = build_samples(&ds, &ids, &HORIZONS, &cfg.builder, scorer.as_ref(), cfg.anticipation.target, exec)?;
    let (model, history) = train_anticipation(&samples, &cfg.anticipation.train)?;
    model.to_checkpoint().save(&run.path("anticipation.ckpt"), anticipation::CHECKPOINT_KIND)?;
    run.record("anticipation.ckpt");
    run.write_json(
        "metrics/anticipation_train.json",
        &serde_json::json!({ "samples": samples.len(), "epoch_losses": history }),
    )?;
    info!("trained anticipation model on {} samples", samples.len());
    Ok(run)
}

pub fn eval_anticipation(cfg: &RunConfig, exec: Exec) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let scorer = scorer(cfg)?;
    let mut run = RunDir::open(cfg, "eval-anticipation")?;
    let model = AnticipationModel::from_checkpoint(Checkpoint::load(
        &run.path("anticipation.ckpt"),
        anticipation::CHECKPOINT_KIND,
    )?)?;
    let mode = cfg.anticipation.target;
    let train_ids = ds.video_ids(Split::Train);
    let test_ids = ds.video_ids(Split::Test);
    if test_ids.is_empty() {
        return Err(data_err("the dataset has no test videos".into()));
    }
    let test = build_samples(&ds, &test_ids, &HORIZONS, &cfg.builder, scorer.as_ref(), mode, exec)?;
    let split = EvalSplit::from_counts(&class_counts(&ds, &train_ids, mode));
    let ours = test.iter().map(|s| model.predict_future(s)).collect::<zonegraph::Result<Vec<_>>>()?;
    let dist = train_dist(&ds, &train_ids, mode);
    let dist_scores: Vec<Vec<f64>> = test.iter().map(|_| dist.clone()).collect();
    let ours = evaluate_predictions(&test, &ours, &split, exec)?;
    let baseline = evaluate_predictions(&test, &dist_scores, &split, exec)?;
    info!("anticipation mAP over horizons: ours {:?}, train_dist {:?}", ours.mean_all, baseline.mean_all);
    run.write_json(
        "metrics/anticipation.json",
        &serde_json::json!({ "samples": test.len(), "ours": ours, "train_dist": baseline }),
    )?;
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Dot,
    Json,
}

pub fn export(cfg: &RunConfig, format: ExportFormat, directed: bool) -> Result<RunDir, CliError> {
    let ds = load_data(cfg)?;
    let graphs = load_graphs(cfg, &ds, None)?;
    let mut run = RunDir::open(cfg, "export")?;
    for g in &graphs {
        match format {
            ExportFormat::Dot => run.write(format!("export/graphs/{}.dot", g.video_id), g.to_dot(directed).as_bytes())?,
            ExportFormat::Json => run.write_json(format!("export/graphs/{}.json", g.video_id), &g.to_file())?,
        }
    }
    let consolidated = run.path("consolidated.json");
    if consolidated.exists() {
        let file: ConsolidatedFile = read_json(&consolidated)?;
        let cg = ConsolidatedGraph::from_file(file)?;
        match format {
            ExportFormat::Dot => run.write("export/consolidated.dot", cg.to_dot().as_bytes())?,
            ExportFormat::Json => run.write_json("export/consolidated.json", &cg.to_file())?,
        }
    }
    info!("exported {} graphs", graphs.len());
    Ok(run)
}
