//! Command-line surface of the placerec toolkit. One subcommand per
//! pipeline stage; every stage reads and writes files so its output can be
//! inspected or replayed.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use placerec::aggregate::AggregatorKind;
use placerec::config::PipelineConfig;

pub mod commands;

#[derive(Debug, Parser)]
#[command(name = "placerec", version, about = "Place-recognition pair mining, aggregation and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file (or the defaults).
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Positive-pair image-position distance threshold in meters [default: 10].
    #[arg(long, global = true)]
    pub dist_threshold: Option<f64>,
    /// Viewing-direction threshold in degrees [default: 45].
    #[arg(long, global = true)]
    pub angle_threshold_deg: Option<f64>,
    /// Distance from camera to image position in meters [default: 25].
    #[arg(long, global = true)]
    pub offset_m: Option<f64>,
    /// Output descriptor dimension [default: 640].
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Triplet margin [default: 0.5].
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    /// Negatives per query [default: 6].
    #[arg(long, global = true)]
    pub n_neg: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl GlobalArgs {
    /// Loads the config file, applies flag overrides and validates.
    pub fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.dist_threshold {
            cfg.mining.dist_threshold_m = v;
        }
        if let Some(v) = self.angle_threshold_deg {
            cfg.mining.angle_threshold_deg = v;
        }
        if let Some(v) = self.offset_m {
            cfg.mining.offset_m = v;
        }
        if let Some(v) = self.dim {
            cfg.descriptor.dim = v;
        }
        if let Some(v) = self.margin {
            cfg.loss.margin = v;
        }
        if let Some(v) = self.n_neg {
            cfg.loss.n_neg = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine positives, negatives and difficulty labels from a pose log.
    Mine(MineArgs),
    /// Split scenes into train/test along scene-graph components.
    Split(SplitArgs),
    /// Aggregate feature maps into a descriptor file.
    Aggregate(AggregateArgs),
    /// Recall@K of query descriptors against a database.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on toy data.
    Gradcheck(GradcheckArgs),
    /// Gradient descent on toy data, emitting a loss trace.
    Train(TrainArgs),
    /// Generate a synthetic pose log and feature-map corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub poses: PathBuf,
    /// PairSet output, one JSON object per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `split.test_fraction`.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Visual-stream aggregator; defaults to `descriptor.aggregator`.
    #[arg(long)]
    pub variant: Option<AggregatorKind>,
    /// JSON aggregator parameters; seeded random initialization otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Write the parameters actually used.
    #[arg(long)]
    pub save_params: Option<PathBuf>,
    /// Visual FMAP files; ids are the file names up to the first dot.
    #[arg(long, num_args = 1..)]
    pub visual: Vec<PathBuf>,
    /// Structural FMAP files paired with `--visual`; enables fusion.
    #[arg(long, num_args = 1..)]
    pub structural: Vec<PathBuf>,
    /// Corpus directory written by `synth` (replaces `--visual`).
    #[arg(long, conflicts_with = "visual")]
    pub corpus: Option<PathBuf>,
    /// Fuse with the structural stream of `--corpus`.
    #[arg(long)]
    pub fuse: bool,
    /// Only aggregate these sample ids from `--corpus`.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// DESC output; ids go to `<out>.ids`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Pose log used to drop each query's consecutive frames from the database.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Keep consecutive frames in the database.
    #[arg(long)]
    pub keep_consecutive: bool,
    /// Comma-separated K values; defaults to `eval.ks`.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, default_value = "run")]
    pub name: String,
    /// Second run's query descriptors, reported against the first.
    #[arg(long, requires = "compare_db")]
    pub compare_query: Option<PathBuf>,
    #[arg(long, requires = "compare_query")]
    pub compare_db: Option<PathBuf>,
    #[arg(long, default_value = "compare")]
    pub compare_name: String,
    /// Also write the report(s) as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = placerec::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Toy data spec (TOML).
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Re-mine negatives each step with the adaptive hard miner.
    #[arg(long)]
    pub mining: bool,
    /// CSV trace output; written to stdout when absent.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Toy data spec (TOML).
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus spec (TOML); flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub corruption: Option<f64>,
    #[arg(long)]
    pub regions: Option<usize>,
}

/// Runs one parsed invocation, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = cli.global.resolve()?;
    let dim_explicit = cli.global.dim.is_some() || cli.global.config.is_some();
    match &cli.command {
        Command::Mine(a) => commands::mine(a, &cfg, out),
        Command::Split(a) => commands::split(a, &cfg, out),
        Command::Aggregate(a) => commands::aggregate(a, &cfg, dim_explicit, out),
        Command::Eval(a) => commands::eval(a, &cfg, out),
        Command::Gradcheck(a) => commands::gradcheck(a, &cfg, out),
        Command::Train(a) => commands::train(a, &cfg, out),
        Command::Synth(a) => commands::synth(a, &cfg, out),
    }
}
