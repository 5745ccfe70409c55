//! Run configuration: one TOML file holding every module's settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zonegraph::affordance::{AffordanceTrainConfig, Variant};
use zonegraph::anticipation::{AnticipationTrainConfig, TargetMode};
use zonegraph::linker::LinkConfig;
use zonegraph::pairgen::PairGenConfig;
use zonegraph::simnet::SimTrainConfig;
use zonegraph::synth::{MarkovBenchConfig, SynthConfig};
use zonegraph::topo::BuilderConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seed of every module.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub log_level: String,
    pub data: DataConfig,
    pub synth: SynthSection,
    pub pairgen: PairGenConfig,
    pub simnet: SimTrainConfig,
    pub scorer: ScorerKind,
    pub builder: BuilderConfig,
    pub link: LinkConfig,
    pub affordance: AffordanceSection,
    pub anticipation: AnticipationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("run"),
            log_level: "info".into(),
            data: DataConfig::default(),
            synth: SynthSection::default(),
            pairgen: PairGenConfig::default(),
            simnet: SimTrainConfig::default(),
            scorer: ScorerKind::default(),
            builder: BuilderConfig::default(),
            link: LinkConfig::default(),
            affordance: AffordanceSection::default(),
            anticipation: AnticipationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest; `<out_dir>/data/manifest.json` when unset.
    pub manifest: Option<PathBuf>,
    pub target_fps: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            target_fps: Some(6.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    #[default]
    Kitchens,
    Markov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub benchmark: Benchmark,
    pub kitchens: SynthConfig,
    pub markov: MarkovBenchConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Kitchens,
            kitchens: SynthConfig {
                n_environments: 2,
                test_videos_per_environment: 1,
                rare_per_type: 1,
                rare_weight: 0.3,
                ..SynthConfig::default()
            },
            markov: MarkovBenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// The trained similarity network from `train-sim`.
    #[default]
    Simnet,
    /// Rescaled cosine similarity of the embeddings.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffordanceSection {
    pub variant: Variant,
    /// Evaluate every n-th test frame when zone ground truth is available.
    pub eval_stride: usize,
    pub train: AffordanceTrainConfig,
}

impl Default for AffordanceSection {
    fn default() -> Self {
        Self {
            variant: Variant::C,
            eval_stride: 5,
            train: AffordanceTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AnticipationSection {
    pub target: TargetMode,
    pub train: AnticipationTrainConfig,
}

/// Where a default comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Published setting of the method.
    Published,
    /// Chosen by this implementation.
    Chosen,
    /// Bookkeeping with no bearing on results.
    Plumbing,
}

impl Provenance {
    fn tag(self) -> &'static str {
        match self {
            Provenance::Published => "published",
            Provenance::Chosen => "chosen",
            Provenance::Plumbing => "plumbing",
        }
    }
}

use Provenance::*;

/// Description of every config key. Module seeds are listed under their
/// sections; `seed` at the top overrides all of them.
pub const KEYS: &[(&str, Provenance, &str)] = &[
    ("seed", Plumbing, "global seed; replaces every module seed when set"),
    ("out_dir", Plumbing, "run directory holding every artifact"),
    ("log_level", Plumbing, "error, warn, info, debug or trace"),
    ("data.manifest", Plumbing, "dataset manifest (default <out_dir>/data/manifest.json)"),
    ("data.target_fps", Published, "subsample videos to this frame rate on load (6 fps)"),
    ("synth.benchmark", Plumbing, "kitchens (linked kitchens with rare interactions) or markov (anticipation benchmark)"),
    ("synth.kitchens.n_zones", Chosen, "functional zone types per kitchen"),
    ("synth.kitchens.n_environments", Chosen, "kitchens sharing the zone types"),
    ("synth.kitchens.dim", Chosen, "embedding dimension"),
    ("synth.kitchens.separation", Chosen, "minimum centroid distance in units of noise_scale"),
    ("synth.kitchens.noise_scale", Chosen, "RMS norm of per-frame noise"),
    ("synth.kitchens.dwell_mean", Chosen, "mean frames spent in a zone per visit"),
    ("synth.kitchens.transition", Chosen, "zone transition matrix; uniform off-diagonal when unset"),
    ("synth.kitchens.active_object_noise", Chosen, "norm of the low-rank active-object offset"),
    ("synth.kitchens.active_object_fraction", Chosen, "fraction of frames carrying the offset"),
    ("synth.kitchens.active_object_rank", Chosen, "rank of the offset subspace"),
    ("synth.kitchens.videos_per_environment", Chosen, "videos per kitchen"),
    ("synth.kitchens.test_videos_per_environment", Chosen, "trailing videos of each kitchen held out for testing"),
    ("synth.kitchens.frames_per_video", Chosen, "frames per video"),
    ("synth.kitchens.fps", Published, "frame rate of generated videos (6 fps)"),
    ("synth.kitchens.verbs_per_type", Chosen, "verbs owned by each zone type"),
    ("synth.kitchens.nouns_per_type", Chosen, "nouns owned by each zone type"),
    ("synth.kitchens.rare_per_type", Chosen, "rare interactions per zone type"),
    ("synth.kitchens.rare_weight", Chosen, "relative weight of a rare interaction"),
    ("synth.kitchens.rare_exclusive", Chosen, "rare interactions observable in a single kitchen only"),
    ("synth.kitchens.clip_len", Chosen, "inclusive range of clip lengths in frames"),
    ("synth.kitchens.clip_gap", Chosen, "inclusive range of gaps between clips"),
    ("synth.kitchens.seed", Plumbing, "generator seed"),
    ("synth.markov.n_zones", Chosen, "zones of the single benchmark kitchen"),
    ("synth.markov.n_tasks", Chosen, "tasks, each with its own zone layout and verbs"),
    ("synth.markov.dim", Chosen, "embedding dimension"),
    ("synth.markov.separation", Chosen, "minimum centroid distance in units of noise_scale"),
    ("synth.markov.noise_scale", Chosen, "RMS norm of per-frame noise"),
    ("synth.markov.dwell_mean", Chosen, "mean frames per zone visit"),
    ("synth.markov.active_object_noise", Chosen, "norm of the active-object offset"),
    ("synth.markov.active_object_fraction", Chosen, "fraction of frames carrying the offset"),
    ("synth.markov.train_videos", Chosen, "training videos"),
    ("synth.markov.test_videos", Chosen, "test videos"),
    ("synth.markov.frames_per_video", Chosen, "frames per video"),
    ("synth.markov.task_verb_prob", Chosen, "probability a clip uses its task-specific verb"),
    ("synth.markov.seed", Plumbing, "generator seed"),
    ("pairgen.temporal_window", Published, "frames closer than this are a similar pair (15)"),
    ("pairgen.min_inliers", Published, "homography inliers for a similar pair (10)"),
    ("pairgen.ransac_iters", Chosen, "RANSAC iterations"),
    ("pairgen.inlier_px", Chosen, "RANSAC reprojection threshold in pixels"),
    ("pairgen.dissim_min_gap", Chosen, "minimum frame gap of a dissimilar pair"),
    ("pairgen.dissim_max_feature_sim", Chosen, "cosine ceiling of a dissimilar pair"),
    ("pairgen.candidates_per_video", Chosen, "random candidate pairs per video before balancing"),
    ("pairgen.seed", Plumbing, "pair sampling seed"),
    ("simnet.lr", Published, "Adam learning rate (1e-4)"),
    ("simnet.epochs", Published, "training epochs (20)"),
    ("simnet.batch_size", Published, "minibatch size (256)"),
    ("simnet.seed", Plumbing, "initialisation and shuffling seed"),
    ("simnet.val_fraction", Chosen, "pairs held out for validation accuracy"),
    ("simnet.hidden", Chosen, "hidden width of the similarity MLP"),
    ("simnet.layers", Chosen, "linear layers of the similarity MLP"),
    ("scorer", Plumbing, "frame pair scorer for graph building: simnet or cosine"),
    ("builder.sigma", Published, "merge threshold on the best frame-to-node score (0.7)"),
    ("builder.margin", Published, "new zones need a score below sigma - margin (0.3)"),
    ("builder.score_window", Published, "frames averaged around the query frame (9)"),
    ("builder.frames_per_visit", Published, "frames sampled per visit when scoring (20)"),
    ("builder.visit_repr", Chosen, "visit representation: uniform or center"),
    ("link.threshold_fraction", Published, "stop merging below this fraction of the mean similarity (0.4)"),
    ("link.linkage", Chosen, "cluster linkage: average, single or complete"),
    ("link.epsilon", Chosen, "additive smoothing of action/object histograms"),
    ("affordance.variant", Published, "training labels: s, m, c, clip_action or kmeans"),
    ("affordance.eval_stride", Chosen, "evaluate every n-th test frame against zone ground truth"),
    ("affordance.train.hidden", Published, "hidden width of the affordance MLP (512)"),
    ("affordance.train.lr", Published, "initial learning rate (1e-4)"),
    ("affordance.train.lr_final", Published, "learning rate after the milestone (1e-5)"),
    ("affordance.train.lr_milestone", Published, "epoch at which the learning rate drops (15)"),
    ("affordance.train.weight_decay", Published, "weight decay (1e-6)"),
    ("affordance.train.batch_size", Published, "minibatch size (256)"),
    ("affordance.train.epochs", Published, "training epochs (20)"),
    ("affordance.train.seed", Plumbing, "initialisation and shuffling seed"),
    ("anticipation.target", Chosen, "future classes: verbs or interactions"),
    ("anticipation.train.hidden", Chosen, "hidden width of node MLP and graph convolution"),
    ("anticipation.train.gcn_layers", Published, "graph convolution layers (1)"),
    ("anticipation.train.lr", Published, "Adam learning rate (1e-3)"),
    ("anticipation.train.lr_milestone", Published, "epoch at which the learning rate drops (80)"),
    ("anticipation.train.lr_gamma", Published, "learning rate factor at the milestone (0.1)"),
    ("anticipation.train.weight_decay", Published, "weight decay (1e-5)"),
    ("anticipation.train.batch_size", Published, "minibatch size (256)"),
    ("anticipation.train.epochs", Published, "training epochs (100)"),
    ("anticipation.train.seed", Plumbing, "initialisation and shuffling seed"),
];

/// Help text for the keys under `prefixes`, with their defaults.
pub fn keys_help(prefixes: &[&str]) -> String {
    let defaults = toml::Value::try_from(RunConfig::default()).expect("default config serialises");
    let mut s = String::from("Config keys (file value, overridden by --set KEY=VALUE):\n");
    for (key, prov, desc) in KEYS {
        let top = key.split('.').next().unwrap();
        if !prefixes.is_empty() && !prefixes.contains(&top) {
            continue;
        }
        let default = lookup(&defaults, key).map_or("unset".to_string(), |v| v.to_string());
        s.push_str(&format!("  {key} = {default}\n      {desc} [{}]\n", prov.tag()));
    }
    s
}

fn lookup<'a>(v: &'a toml::Value, key: &str) -> Option<&'a toml::Value> {
    key.split('.').try_fold(v, |v, k| v.get(k))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Parse a config layered over the defaults: a partial table keeps the
    /// defaults of this struct for the keys it omits.
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        let file: toml::Table = toml::from_str(text)?;
        let mut root = toml::Value::try_from(RunConfig::default()).expect("default config serialises");
        merge(&mut root, toml::Value::Table(file));
        root.try_into()
    }

    /// Apply `key=value` overrides. Values are TOML literals; anything that
    /// does not parse as one is taken as a string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = toml::Value::try_from(&self).map_err(|e| CliError::Usage(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {item:?} is not KEY=VALUE")))?;
            let key = key.trim();
            let value = parse_literal(raw.trim());
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| CliError::Usage(format!("empty key in {item:?}")))?;
            let mut table = root.as_table_mut().unwrap();
            for p in parts {
                table = table
                    .get_mut(p)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| CliError::Usage(format!("unknown config section {p:?} in {key:?}")))?;
            }
            table.insert(leaf.to_string(), value);
        }
        root.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("override: {e}")))
    }

    /// Push the global seed into every module and check each block.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if let Some(s) = self.seed {
            self.synth.kitchens.seed = s;
            self.synth.markov.seed = s;
            self.pairgen.seed = s;
            self.simnet.seed = s;
            self.affordance.train.seed = s;
            self.anticipation.train.seed = s;
        }
        if !matches!(self.log_level.as_str(), "error" | "warn" | "info" | "debug" | "trace" | "off") {
            return Err(CliError::Usage(format!("unknown log_level {:?}", self.log_level)));
        }
        if let Some(f) = self.data.target_fps {
            if !(f.is_finite() && f > 0.0) {
                return Err(CliError::Usage(format!("data.target_fps must be positive, got {f}")));
            }
        }
        self.synth.kitchens.validate()?;
        self.synth.markov.validate()?;
        self.pairgen.validate()?;
        self.simnet.validate()?;
        self.builder.validate()?;
        self.link.validate()?;
        self.affordance.train.validate()?;
        self.anticipation.train.validate()?;
        if self.affordance.eval_stride == 0 {
            return Err(CliError::Usage("affordance.eval_stride must be positive".into()));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
