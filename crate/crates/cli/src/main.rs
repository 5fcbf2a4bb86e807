//! Command-line front end for noisy-label sample selection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Failure;
use crate::config::{RunConfig, Settings};

#[derive(Parser, Debug)]
#[command(name = "enkcvs", version, about = "Noisy-label sample selection by repeated K-fold cross-validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    args: Args,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate a synthetic Gaussian-blob dataset.
    GenData,
    /// Corrupt the labels of a dataset with a noise model.
    Inject,
    /// Run repeated cross-validation and write per-sample verdicts.
    Select,
    /// Retrain with the composite loss on a selection.
    Retrain,
    /// Evaluate a saved model or a saved selection.
    Eval,
    /// Run a grid of selection experiments.
    Sweep,
    /// Closed-form precision and recall.
    Theory,
    /// Closed form next to a Monte Carlo estimate.
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Inject => "inject",
            Command::Select => "select",
            Command::Retrain => "retrain",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Theory => "theory",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(clap::Args, Debug, Default)]
struct Args {
    /// Config file (`key = value` lines) or a previous run's manifest.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $ENKCVS_OUT or ./out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[arg(long, global = true)]
    csv: Option<String>,
    #[arg(long = "label-col", global = true)]
    label_col: Option<String>,
    #[arg(long = "true-label-col", global = true)]
    true_label_col: Option<String>,
    #[arg(long = "num-classes", global = true)]
    num_classes: Option<String>,
    /// Synthetic data as Q,N,D,SEPARATION.
    #[arg(long, global = true)]
    blobs: Option<String>,
    #[arg(long = "test-csv", global = true)]
    test_csv: Option<String>,
    /// Size of the synthetic clean test set.
    #[arg(long = "test-n", global = true)]
    test_n: Option<String>,

    /// `none`, `symmetric:EPS` or `asym:EPS[:j>k,...]`.
    #[arg(long, global = true)]
    noise: Option<String>,
    #[arg(long = "K", global = true)]
    k: Option<String>,
    #[arg(long = "M", global = true)]
    m: Option<String>,
    #[arg(long = "t", global = true)]
    t: Option<String>,
    /// Selection JSON from a previous `select` run.
    #[arg(long, global = true)]
    selection: Option<String>,

    #[arg(long, global = true)]
    gamma: Option<String>,
    /// Mixup Beta parameter.
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long = "batch-size", global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    /// `linear` or `hidden:WIDTH`.
    #[arg(long, global = true)]
    arch: Option<String>,
    /// Saved model JSON for `eval`.
    #[arg(long, global = true)]
    model: Option<String>,

    #[arg(long = "Q", global = true)]
    q_classes: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<String>,
    #[arg(long = "q", global = true)]
    q: Option<String>,
    /// `corrected` or `literal`.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Monte Carlo sample count.
    #[arg(long = "N", global = true)]
    n_samples: Option<String>,

    #[arg(long = "grid-K", global = true)]
    grid_k: Option<String>,
    #[arg(long = "grid-M", global = true)]
    grid_m: Option<String>,
    #[arg(long = "grid-t", global = true)]
    grid_t: Option<String>,
    #[arg(long = "grid-epsilon", global = true)]
    grid_epsilon: Option<String>,
    #[arg(long = "grid-pairs", global = true)]
    grid_pairs: Option<String>,
    #[arg(long, global = true)]
    seeds: Option<String>,
    #[arg(long = "sweep-retrain", global = true)]
    sweep_retrain: bool,
}

impl Args {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs: [(&'static str, &Option<String>); 30] = [
            ("data.csv", &self.csv),
            ("data.label_col", &self.label_col),
            ("data.true_label_col", &self.true_label_col),
            ("data.num_classes", &self.num_classes),
            ("data.blobs", &self.blobs),
            ("data.test_csv", &self.test_csv),
            ("test.n", &self.test_n),
            ("noise", &self.noise),
            ("selection.K", &self.k),
            ("selection.M", &self.m),
            ("selection.t", &self.t),
            ("selection.file", &self.selection),
            ("loss.gamma", &self.gamma),
            ("train.alpha", &self.alpha),
            ("train.epochs", &self.epochs),
            ("train.batch_size", &self.batch_size),
            ("train.lr", &self.lr),
            ("model.arch", &self.arch),
            ("model.file", &self.model),
            ("theory.Q", &self.q_classes),
            ("theory.epsilon", &self.epsilon),
            ("theory.q", &self.q),
            ("theory.mode", &self.mode),
            ("theory.N", &self.n_samples),
            ("sweep.K", &self.grid_k),
            ("sweep.M", &self.grid_m),
            ("sweep.t", &self.grid_t),
            ("sweep.epsilon", &self.grid_epsilon),
            ("sweep.pairs", &self.grid_pairs),
            ("sweep.seeds", &self.seeds),
        ];
        let mut out: Vec<_> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if let Some(seed) = self.seed {
            out.push(("seed", seed.to_string()));
        }
        if self.sweep_retrain {
            out.push(("sweep.retrain", "true".into()));
        }
        out
    }
}

fn settings(args: &Args) -> Result<Settings, config::ConfigError> {
    let mut s = Settings::default();
    if let Some(path) = &args.config {
        s.load_file(path)?;
    }
    for (k, v) in args.overrides() {
        s.set(k, &v)?;
    }
    Ok(s)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let settings = match settings(&cli.args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cfg = match RunConfig::from_settings(&settings) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.args.workers).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(2);
    }
    let out = cli
        .args
        .out
        .clone()
        .or_else(|| std::env::var_os("ENKCVS_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let run = commands::Run {
        command: cli.command,
        settings,
        cfg,
        out,
        workers: cli.args.workers,
    };
    match commands::execute(&run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
