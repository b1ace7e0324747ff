//! `tier`: generate synthetic data, train, sweep, score and evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tier::metrics::ThresholdObjective;
use tier::synth_data::Split;
use tier::Error;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "tier", version, about)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; the resolved configuration is written here first.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset container and manifest.
    GenData(GenDataArgs),
    /// Train one model and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Train one short run per (lambda_p, lambda_t) grid cell and score each on val.
    Sweep(SweepArgs),
    /// Zero-shot scores of a checkpoint on one dataset split.
    Zeroshot(ZeroshotArgs),
    /// Bootstrap AUC, MCC and F1 for one score table, or a comparison of two.
    Eval(EvalArgs),
    /// Per-patch zero-shot heatmap of one sample as PPM and CSV.
    Heatmap(HeatmapArgs),
    /// Sorted patch-to-[CLS] similarity curves of one or more checkpoints.
    Curves(CurvesArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count_train: Option<usize>,
    #[arg(long)]
    count_val: Option<usize>,
    #[arg(long)]
    count_test: Option<usize>,
    /// Number of object classes.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    lambda_p: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Also save a checkpoint every this many epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a saved checkpoint up to `--epochs`.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct ZeroshotArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// train, val or test.
    #[arg(long = "dataset-split", alias = "split")]
    split: Option<Split>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// One score table, or two to compare.
    #[arg(long, num_args = 1..=2)]
    scores: Vec<PathBuf>,
    /// Validation score tables for threshold selection, matching `--scores`.
    #[arg(long, num_args = 1..=2)]
    val_scores: Vec<PathBuf>,
    /// Model names, matching `--scores`.
    #[arg(long, num_args = 1..=2)]
    names: Vec<String>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Threshold selection objective: mcc or f1.
    #[arg(long, value_parser = parse_objective)]
    objective: Option<ThresholdObjective>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    sample_id: Option<u32>,
    #[arg(long)]
    label: Option<String>,
    /// Output pixels per patch side.
    #[arg(long)]
    cell: Option<usize>,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[arg(long, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// train, val or test.
    #[arg(long = "dataset-split", alias = "split")]
    split: Option<Split>,
}

fn parse_objective(s: &str) -> Result<ThresholdObjective, String> {
    match s {
        "mcc" => Ok(ThresholdObjective::Mcc),
        "f1" => Ok(ThresholdObjective::F1),
        _ => Err(format!("unknown objective `{s}` (mcc, f1)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_some<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn set_list<T>(slot: &mut Vec<T>, value: Vec<T>) {
    if !value.is_empty() {
        *slot = value;
    }
}

/// Applies the subcommand's flags on top of `rc`.
fn apply(rc: &mut RunConfig, command: &Command) {
    match command {
        Command::GenData(a) => {
            set(&mut rc.data.seed, a.seed);
            set(&mut rc.data.train, a.count_train);
            set(&mut rc.data.val, a.count_val);
            set(&mut rc.data.test, a.count_test);
            set(&mut rc.data.classes, a.classes);
        }
        Command::Train(a) => {
            set_some(&mut rc.dataset, a.dataset.clone());
            set(&mut rc.train.lambda_p, a.lambda_p);
            set(&mut rc.train.lambda_t, a.lambda_t);
            set(&mut rc.train.epochs, a.epochs);
            set(&mut rc.train.seed, a.seed);
            set(&mut rc.train.learning_rate, a.learning_rate);
            set(&mut rc.train.batch_size, a.batch_size);
            set(&mut rc.train.checkpoint_every, a.checkpoint_every);
            set_some(&mut rc.resume, a.resume.clone());
        }
        Command::Sweep(a) => {
            set_some(&mut rc.dataset, a.dataset.clone());
            set_some(&mut rc.queries, a.queries.clone());
            set(&mut rc.sweep.grid_min, a.grid_min);
            set(&mut rc.sweep.grid_max, a.grid_max);
            set(&mut rc.sweep.grid_step, a.grid_step);
            set(&mut rc.sweep.epochs, a.epochs);
            set(&mut rc.train.seed, a.seed);
            set(&mut rc.train.learning_rate, a.learning_rate);
            set(&mut rc.train.batch_size, a.batch_size);
        }
        Command::Zeroshot(a) => {
            set_list(&mut rc.checkpoints, a.checkpoint.iter().cloned().collect());
            set_some(&mut rc.dataset, a.dataset.clone());
            set_some(&mut rc.queries, a.queries.clone());
            set(&mut rc.split, a.split);
        }
        Command::Eval(a) => {
            set_list(&mut rc.eval.scores, a.scores.clone());
            set_list(&mut rc.eval.val_scores, a.val_scores.clone());
            set_list(&mut rc.eval.names, a.names.clone());
            set(&mut rc.eval.bootstrap, a.bootstrap);
            set(&mut rc.eval.seed, a.seed);
            set(&mut rc.eval.objective, a.objective);
        }
        Command::Heatmap(a) => {
            set_list(&mut rc.checkpoints, a.checkpoint.iter().cloned().collect());
            set_some(&mut rc.dataset, a.dataset.clone());
            set_some(&mut rc.queries, a.queries.clone());
            set_some(&mut rc.heatmap.sample_id, a.sample_id);
            set_some(&mut rc.heatmap.label, a.label.clone());
            set(&mut rc.heatmap.cell, a.cell);
        }
        Command::Curves(a) => {
            set_list(&mut rc.checkpoints, a.checkpoint.clone());
            set_some(&mut rc.dataset, a.dataset.clone());
            set(&mut rc.split, a.split);
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Contract(_)
        | Error::Shape { .. }
        | Error::UndefinedAuc
        | Error::Json(_) => 2,
        Error::Integrity { .. } | Error::Version { .. } | Error::Csv(_) => 3,
        Error::NonFinite { .. }
        | Error::DegenerateVector { .. }
        | Error::DegenerateQuery { .. }
        | Error::Domain(_) => 4,
        Error::Io { .. } => 1,
    }
}

fn run(cli: Cli) -> tier::Result<()> {
    let mut rc = RunConfig::load(cli.config.as_deref())?;
    set_some(&mut rc.out, cli.out);
    set_some(&mut rc.workers, cli.workers);
    apply(&mut rc, &cli.command);
    if let Some(n) = rc.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let force = cli.force;
    match cli.command {
        Command::GenData(_) => commands::gen_data(&rc, force),
        Command::Train(_) => commands::train(&rc, force),
        Command::Sweep(_) => commands::sweep(&rc, force),
        Command::Zeroshot(_) => commands::zeroshot(&rc, force),
        Command::Eval(_) => commands::eval(&rc, force),
        Command::Heatmap(_) => commands::heatmap(&rc, force),
        Command::Curves(_) => commands::curves(&rc, force),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
