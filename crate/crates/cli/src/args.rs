use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nce_tpp::trainer::{Objective, Redraw};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "nce-tpp",
    version,
    about = "Fit multivariate temporal point processes by NCE or MLE"
)]
pub struct Cli {
    /// Worker threads for stream-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Where to write the run manifest (defaults to `<output>.manifest.json`).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate a dataset from a checkpointed or random model.
    Simulate(SimulateArgs),
    /// Split a dataset into train, dev and test files.
    Split(SplitArgs),
    /// Fit a coarse-to-fine noise model by maximum likelihood.
    FitNoise(FitNoiseArgs),
    /// Train a model by NCE or Monte-Carlo MLE.
    Train(TrainArgs),
    /// Evaluate a model on held-out data.
    Eval(EvalArgs),
    /// Run a replication experiment.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Hawkes,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Full,
    Shared,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Random model, e.g. `K=2` or `K=2,seed=5`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub random_model: Option<String>,
    /// Model checkpoint to simulate from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Family of the random model.
    #[arg(long, value_enum, default_value_t = Family::Hawkes)]
    pub family: Family,
    #[arg(long, value_enum, default_value_t = Decay::Full)]
    pub decay: Decay,
    #[arg(long)]
    pub streams: usize,
    #[arg(long)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rescale base rates so a stationary stream has this many events on average.
    #[arg(long)]
    pub mean_events: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the generating model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dev_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes `<prefix>.train.jsonl`, `<prefix>.dev.jsonl` and `<prefix>.test.jsonl`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitNoiseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Family::Poisson)]
    pub family: Family,
    /// Number of coarse types when neither the data nor `--partition` gives one.
    #[arg(long = "coarse", short = 'C', default_value_t = 1)]
    pub coarse: usize,
    /// JSON array with the coarse id of every type.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Decay::Full)]
    pub decay: Decay,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub rel_tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// `nce` or `mle`.
    #[arg(long, default_value_t = Objective::Nce)]
    pub objective: Objective,
    /// Noise streams per real stream (NCE).
    #[serde(rename = "M")]
    #[arg(long = "M", default_value_t = 5.0)]
    pub m: f64,
    /// Monte-Carlo points per event (MLE).
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// `always` draws fresh noise every epoch, `never` reuses the first draw.
    #[arg(long, default_value_t = Redraw::Always)]
    pub redraw: Redraw,
    /// Noise checkpoint (required for NCE).
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Starting model checkpoint; a data-scaled random start otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Family::Hawkes)]
    pub family: Family,
    #[arg(long, value_enum, default_value_t = Decay::Full)]
    pub decay: Decay,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trained model checkpoint; also rewritten at every evaluation.
    #[arg(long)]
    pub out: PathBuf,
    /// Learning curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// JSON report with the configuration, curve and per-epoch counters.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Training report to build a cost summary from.
    #[arg(long)]
    pub train_report: Option<PathBuf>,
    /// Dev log-likelihood per stream to measure evaluations-to-target against.
    #[arg(long, allow_negative_numbers = true)]
    pub target_ll: Option<f64>,
    /// Thinning continuations per next-event prediction (0 skips prediction).
    #[arg(long, default_value_t = 0)]
    pub predict_draws: usize,
    /// Largest number of events to predict.
    #[arg(long, default_value_t = 200)]
    pub predict_max: usize,
    /// Monte-Carlo points per event for the held-out check (0 skips it).
    #[arg(long, default_value_t = 0.0)]
    pub mc_rho: f64,
    #[arg(long, default_value_t = 20)]
    pub mc_reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentCommand {
    /// Estimator variance of NCE against MLE on a homogeneous Poisson process.
    Variance(VarianceArgs),
    /// NCE parameter error at two dataset sizes.
    Recovery(RecoveryArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct VarianceArgs {
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 200)]
    pub streams: usize,
    #[arg(long, default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    /// Comma-separated noise multiples.
    #[serde(rename = "M")]
    #[arg(long = "M", value_delimiter = ',', default_value = "1,10")]
    pub m: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RecoveryArgs {
    /// Random true model, e.g. `K=2` or `K=2,seed=5`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub random_model: Option<String>,
    /// Checkpoint of the true model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Decay::Full)]
    pub decay: Decay,
    #[arg(long, default_value_t = 50)]
    pub small: usize,
    #[arg(long, default_value_t = 500)]
    pub large: usize,
    #[arg(long, default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    #[serde(rename = "M")]
    #[arg(long = "M", default_value_t = 5.0)]
    pub m: f64,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest_file: PathBuf,
}
