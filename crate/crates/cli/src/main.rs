//! `zonegraph` command-line driver.
//!
//! Stages read and write artifacts under one run directory, so a full
//! pipeline is
//!
//! ```text
//! zonegraph synth && zonegraph pairs && zonegraph train-sim \
//!   && zonegraph build-graph && zonegraph link && zonegraph eval-affordance
//! ```

mod config;
mod run;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use zonegraph::{Exec, ErrorKind};

use config::RunConfig;
use stages::ExportFormat;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(zonegraph::Error),
}

impl From<zonegraph::Error> for CliError {
    fn from(e: zonegraph::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Internal => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "zonegraph",
    version,
    about = "Zone graphs from egocentric video embeddings",
    after_help = "Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal invariant violation.\n\
                  Run `zonegraph <command> --help` for the config keys each command reads."
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set builder.sigma=0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run directory (config key `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset manifest (config key `data.manifest`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Global seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level (config key `log_level`).
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with ground truth into <out_dir>/data.
    Synth,
    /// Sample similar and dissimilar frame pairs.
    Pairs {
        /// JSON-lines file of keypoint correspondences between frames.
        #[arg(long)]
        correspondences: Option<PathBuf>,
    },
    /// Train the frame similarity network on sampled pairs.
    TrainSim,
    /// Build one zone graph per video.
    BuildGraph {
        /// Merge threshold (config key `builder.sigma`).
        #[arg(long)]
        sigma: Option<f64>,
        /// Creation margin (config key `builder.margin`).
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Link zones across videos and kitchens by the actions performed there.
    Link,
    /// Train the affordance classifier for one label variant.
    TrainAffordance {
        /// s, m, c, clip_action or kmeans (config key `affordance.variant`).
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate affordance mAP on the test videos.
    EvalAffordance {
        /// s, m, c, clip_action or kmeans (config key `affordance.variant`).
        #[arg(long)]
        variant: Option<String>,
    },
    /// Train the graph-convolution anticipation model.
    TrainAnticipation,
    /// Evaluate long-horizon anticipation mAP on the test videos.
    EvalAnticipation,
    /// Export graphs as DOT or JSON under <out_dir>/export.
    Export {
        #[arg(long, value_enum, default_value = "dot")]
        format: ExportFormat,
        /// Keep edge direction in DOT output.
        #[arg(long)]
        directed: bool,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Pairs { .. } => "pairs",
            Command::TrainSim => "train-sim",
            Command::BuildGraph { .. } => "build-graph",
            Command::Link => "link",
            Command::TrainAffordance { .. } => "train-affordance",
            Command::EvalAffordance { .. } => "eval-affordance",
            Command::TrainAnticipation => "train-anticipation",
            Command::EvalAnticipation => "eval-anticipation",
            Command::Export { .. } => "export",
        }
    }
}

/// Config sections each stage reads, for its `--help`.
fn sections(stage: &str) -> &'static [&'static str] {
    const COMMON: [&str; 4] = ["seed", "out_dir", "log_level", "data"];
    match stage {
        "synth" => &["seed", "out_dir", "log_level", "synth"],
        "pairs" => &["seed", "out_dir", "log_level", "data", "pairgen"],
        "train-sim" => &["seed", "out_dir", "log_level", "data", "simnet"],
        "build-graph" => &["seed", "out_dir", "log_level", "data", "scorer", "builder"],
        "link" => &["seed", "out_dir", "log_level", "data", "builder", "link"],
        "train-affordance" | "eval-affordance" => &["seed", "out_dir", "log_level", "data", "builder", "link", "affordance"],
        "train-anticipation" | "eval-anticipation" => &["seed", "out_dir", "log_level", "data", "scorer", "builder", "anticipation"],
        _ => &COMMON,
    }
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let help = config::keys_help(sections(&name));
        cmd = cmd.mut_subcommand(&name, |s| s.after_long_help(help.clone()).after_help(help));
    }
    cmd
}

fn effective_config(g: &Global, cmd: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg = cfg.with_overrides(&g.overrides)?;
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = &g.data {
        cfg.data.manifest = Some(d.clone());
    }
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
    }
    if let Some(l) = &g.log_level {
        cfg.log_level = l.clone();
    }
    match cmd {
        Command::BuildGraph { sigma, margin } => {
            if let Some(s) = sigma {
                cfg.builder.sigma = *s;
            }
            if let Some(m) = margin {
                cfg.builder.margin = *m;
            }
        }
        Command::TrainAffordance { variant: Some(v) } | Command::EvalAffordance { variant: Some(v) } => {
            cfg.affordance.variant = v.parse()?;
        }
        _ => {}
    }
    cfg.resolve()
}

fn exec_for(threads: Option<usize>) -> Result<Exec, CliError> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None => Ok(Exec::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli.global, &cli.command)?;
    if cli.global.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let exec = exec_for(cli.global.threads)?;
    let run = match &cli.command {
        Command::Synth => stages::synth(&cfg, exec)?,
        Command::Pairs { correspondences } => stages::pairs(&cfg, correspondences.as_deref(), exec)?,
        Command::TrainSim => stages::train_sim(&cfg)?,
        Command::BuildGraph { .. } => stages::build_graph(&cfg, exec)?,
        Command::Link => stages::link(&cfg, exec)?,
        Command::TrainAffordance { .. } => stages::train_affordance_stage(&cfg, exec)?,
        Command::EvalAffordance { .. } => stages::eval_affordance(&cfg, exec)?,
        Command::TrainAnticipation => stages::train_anticipation_stage(&cfg, exec)?,
        Command::EvalAnticipation => stages::eval_anticipation(&cfg, exec)?,
        Command::Export { format, directed } => stages::export(&cfg, *format, *directed)?,
    };
    let produced = run.finish(&cfg)?;
    log::info!("{}: wrote {} files under {}", cli.command.stage(), produced.len(), cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
