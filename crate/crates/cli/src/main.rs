//! `adagev` command-line tool.
//!
//! Every command that trains writes a `config.json` echo. Passing it back
//! with `--config` repeats the run; flags given alongside a config file
//! override the file's values.

use std::path::PathBuf;
use std::process::ExitCode;

use adagev::evt::{FitPool, TailMethod};
use adagev::objective::{WeightMode, ZMode};
use adagev::pipeline::{AblationMode, OptimizerKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

use config::{DataSource, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "adagev",
    version,
    about = "Open-set domain adaptation with GEV unknown rejection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic shifted-blobs benchmark to disk.
    GenData(GenDataArgs),
    /// Train a model and fit the GEV on its source entropies.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the target domain.
    Eval(EvalArgs),
    /// Train and evaluate ablation variants.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// full, no-reweight, no-evt-binary or hard-threshold; repeatable.
        /// Defaults to all four.
        #[arg(long = "variant", value_parser = parse_variant)]
        variants: Vec<AblationMode>,
        /// Entropy threshold for hard-threshold; defaults to 0.5 ln K.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a GEV to a whitespace-separated file of values.
    FitGev(FitGevArgs),
    /// Train over a grid of loss weights, one report per point.
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Must cover every class of the role split (the digits split needs 10).
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    source_per_class: Option<usize>,
    #[arg(long)]
    target_per_class: Option<usize>,
    #[arg(long)]
    cluster_std: Option<f64>,
    /// Rotation of the target domain in degrees.
    #[arg(long)]
    rotation: Option<f64>,
    /// JSON role split; defaults to the digits split.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run configuration naming the data and role split, usually the
    /// training run's `config.json`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV; overrides the config's data source.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reject by a fixed entropy threshold instead of the stored GEV.
    #[arg(long)]
    threshold: Option<f64>,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct FitGevArgs {
    #[arg(long)]
    input: PathBuf,
    /// Reduce the values to a tail first, `block:B` or `top:Q`. Without it
    /// the values are fitted as given.
    #[arg(long, value_parser = parse_tail)]
    tail: Option<TailMethod>,
    #[arg(long, default_value_t = 30)]
    min_tail: usize,
    /// Shuffle seed for block maxima.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Variant trained at every point; defaults to the config's, then full.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<AblationMode>,
    /// Grid points trained at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Options shared by every training command.
#[derive(Args, Clone, Default)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV from gen-data. Without it the synthetic benchmark is
    /// generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed of the generated benchmark.
    #[arg(long, conflicts_with = "data")]
    data_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Loss weights. `sweep` takes comma-separated grids here; an omitted
    /// axis keeps the configured value.
    #[arg(long = "lambda-d", value_delimiter = ',')]
    lambda_d: Vec<f64>,
    #[arg(long = "lambda-e", value_delimiter = ',')]
    lambda_e: Vec<f64>,
    #[arg(long = "lambda-c", value_delimiter = ',')]
    lambda_c: Vec<f64>,
    #[arg(long, value_enum)]
    weight_mode: Option<WeightModeArg>,
    #[arg(long, value_enum)]
    z_mode: Option<ZModeArg>,
    /// `block:B` or `top:Q`.
    #[arg(long, value_parser = parse_tail)]
    tail: Option<TailMethod>,
    #[arg(long, value_enum)]
    fit_pool: Option<FitPoolArg>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightModeArg {
    NegEntropy,
    PaperLiteral,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZModeArg {
    SameBatch,
    FreshBatch,
    Combined,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitPoolArg {
    Known,
    KnownPlusUnknown,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

fn parse_tail(s: &str) -> Result<TailMethod, String> {
    let (kind, value) = s.split_once(':').ok_or("expected block:B or top:Q")?;
    match kind {
        "block" => value
            .parse()
            .map(|block_size| TailMethod::BlockMaxima { block_size })
            .map_err(|e| format!("block size: {e}")),
        "top" => value
            .parse()
            .map(|fraction| TailMethod::TopFraction { fraction })
            .map_err(|e| format!("tail fraction: {e}")),
        _ => Err(format!("unknown tail method '{kind}', expected block or top")),
    }
}

fn parse_variant(s: &str) -> Result<AblationMode, String> {
    AblationMode::parse(&s.replace('-', "_")).map_err(|e| e.to_string())
}

impl RunArgs {
    /// Reads `--config` if given, then applies the flags on top.
    pub fn to_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.data {
            cfg.data = DataSource::Csv { path: path.clone() };
        }
        if let Some(seed) = self.data_seed {
            match &mut cfg.data {
                DataSource::Synthetic(blobs) => blobs.seed = seed,
                _ => return Err(CliError::Usage("--data-seed needs synthetic data".into())),
            }
        }
        let tc = &mut cfg.train;
        set(&mut tc.epochs, self.epochs);
        set(&mut tc.batch_size, self.batch);
        set(&mut tc.learning_rate, self.lr);
        set(&mut tc.loss_weights.lambda_d, single("lambda-d", &self.lambda_d)?);
        set(&mut tc.loss_weights.lambda_e, single("lambda-e", &self.lambda_e)?);
        set(&mut tc.loss_weights.lambda_c, single("lambda-c", &self.lambda_c)?);
        set(&mut tc.tail.method, self.tail);
        set(&mut tc.seed, self.seed);
        if let Some(m) = self.weight_mode {
            tc.weights.weight_mode = match m {
                WeightModeArg::NegEntropy => WeightMode::NegEntropy,
                WeightModeArg::PaperLiteral => WeightMode::PaperLiteral,
                WeightModeArg::Uniform => WeightMode::Uniform,
            };
        }
        if let Some(z) = self.z_mode {
            tc.weights.z_mode = match z {
                ZModeArg::SameBatch => ZMode::SameBatch,
                ZModeArg::FreshBatch => ZMode::FreshBatch,
                ZModeArg::Combined => ZMode::Combined,
            };
        }
        if let Some(p) = self.fit_pool {
            tc.tail.source_pool = match p {
                FitPoolArg::Known => FitPool::KnownOnly,
                FitPoolArg::KnownPlusUnknown => FitPool::KnownPlusUnknown,
            };
        }
        if let Some(o) = self.optimizer {
            tc.optimizer = match o {
                OptimizerArg::Adam => OptimizerKind::adam(),
                OptimizerArg::Sgd => OptimizerKind::sgd_momentum(),
            };
        }
        Ok(cfg)
    }
}

fn single(flag: &str, values: &[f64]) -> Result<Option<f64>, CliError> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(CliError::Usage(format!("--{flag} takes one value outside sweep"))),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(&args),
        Command::Train { run, out } => commands::train(&run, &out),
        Command::Eval(args) => commands::eval(&args),
        Command::Ablate {
            run,
            variants,
            tau,
            out,
        } => commands::ablate(&run, variants, tau, &out),
        Command::FitGev(args) => commands::fit_gev(&args),
        Command::Sweep(args) => commands::sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
