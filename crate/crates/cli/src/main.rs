//! `evfuse` command-line interface.
//!
//! Every flag can also be set through an environment variable named
//! `EVFUSE_<FLAG>` (upper case, dashes as underscores), which is handy in CI.
//! Exit codes: 0 on success, 1 for invalid input, 2 when training fails.

mod commands;
mod inputs;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "evfuse", version, about = "Evidential multi-hop graph learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetFormat {
    /// Directory with features.csv → generic; `.toml` file → block-model
    /// spec; anything else → citation raw files.
    Auto,
    Citation,
    Generic,
    Sbm,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset location: citation prefix or directory, generic directory,
    /// or block-model spec file.
    #[arg(long, env = "EVFUSE_DATASET")]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = DatasetFormat::Auto, env = "EVFUSE_DATASET_FORMAT")]
    pub dataset_format: DatasetFormat,
}

/// Training-config overrides, applied on top of `--config`.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML file with training hyperparameters.
    #[arg(long, env = "EVFUSE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "EVFUSE_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long, env = "EVFUSE_WEIGHT_DECAY")]
    pub weight_decay: Option<f64>,
    #[arg(long, env = "EVFUSE_HIDDEN_SIZE")]
    pub hidden_size: Option<usize>,
    #[arg(long, env = "EVFUSE_DROPOUT_RATE")]
    pub dropout_rate: Option<f64>,
    #[arg(long, env = "EVFUSE_PERTURB_SIGMA")]
    pub perturb_sigma: Option<f64>,
    /// Number of propagation steps T.
    #[arg(long, env = "EVFUSE_STEPS")]
    pub steps: Option<usize>,
    /// Explicit hop set, e.g. `0,4,8`.
    #[arg(long, value_delimiter = ',', env = "EVFUSE_HOPS")]
    pub hops: Option<Vec<usize>>,
    #[arg(long, env = "EVFUSE_INCLUDE_HOP0")]
    pub include_hop0: Option<bool>,
    #[arg(long, env = "EVFUSE_ROW_NORMALIZE")]
    pub row_normalize: Option<bool>,
    #[arg(long, env = "EVFUSE_LAMBDA_KL")]
    pub lambda_kl: Option<f64>,
    #[arg(long, env = "EVFUSE_LAMBDA_DIS")]
    pub lambda_dis: Option<f64>,
    #[arg(long, env = "EVFUSE_MAX_EPOCHS")]
    pub max_epochs: Option<usize>,
    #[arg(long, env = "EVFUSE_PATIENCE")]
    pub patience: Option<usize>,
    #[arg(long, env = "EVFUSE_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, env = "EVFUSE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.json, history.tsv and train.{tsv,json}.
    Train {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Independent runs with seeds seed, seed+1, ...; the checkpoint and
        /// history are those of the first run.
        #[arg(long, default_value_t = 10, env = "EVFUSE_RUNS")]
        runs: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Score a checkpoint on every split; writes eval.{tsv,json} and predictions.tsv.
    Eval {
        #[arg(long, env = "EVFUSE_CHECKPOINT")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Test accuracy over nodes whose uncertainty is below each threshold.
    UncertaintyCurve {
        #[arg(long, env = "EVFUSE_CHECKPOINT")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// Thresholds in (0, 1]; defaults to 0.05, 0.10, ..., 1.00.
        #[arg(long, value_delimiter = ',', env = "EVFUSE_THRESHOLDS")]
        thresholds: Option<Vec<f64>>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Uncertainty on clean versus noise-polluted features.
    OodCompare {
        #[arg(long, env = "EVFUSE_CHECKPOINT")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// Noise intensity.
        #[arg(long, default_value_t = 1.0, env = "EVFUSE_ETA")]
        eta: f64,
        /// Seed of the noise draw.
        #[arg(long, default_value_t = 0, env = "EVFUSE_SEED")]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Accuracy of every single-hop variant and of the fused model.
    HopAblation {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Densities of the class-probability standard deviation per depth.
    StdDensity {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16", env = "EVFUSE_DEPTHS")]
        depths: Vec<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exhaustive hyperparameter search; writes grid_sweep.tsv, best_config.toml
    /// and grid.{tsv,json}.
    Grid {
        #[command(flatten)]
        data: DatasetArgs,
        /// TOML search space; any field may hold a list of candidates.
        #[arg(long, env = "EVFUSE_SPACE")]
        space: PathBuf,
        #[arg(long, default_value_t = 1, env = "EVFUSE_TRIALS")]
        trials: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write a synthetic block-model dataset in the generic format.
    SbmGenerate {
        /// TOML block-model spec; flags below override its fields.
        #[arg(long, env = "EVFUSE_SPEC")]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        p_in: Option<f64>,
        #[arg(long)]
        p_out: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        train_per_class: Option<usize>,
        #[arg(long)]
        val_per_class: Option<usize>,
        #[arg(long, env = "EVFUSE_SEED")]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
