//! `daif`: train, evaluate, preview augmentations, sweep hyperparameters and
//! generate synthetic data.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numeric
//! failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use daif_core::data::SynthSpec;
use daif_core::experiment::{self, parse_list, ExperimentConfig, RunLog, Sweep};
use daif_core::{Backbone, Error, Strategy};

#[derive(Parser)]
#[command(name = "daif", version, about = "Inverted-framework forecasting with on-the-fly token augmentation")]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per (prediction length, seed) and write results.csv.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate checkpoints on the test split and write eval_results.csv.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint files to evaluate.
        #[arg(long = "checkpoint", required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
    },
    /// Write a lookback window and its augmented tokens as CSV files.
    AugmentPreview {
        #[command(flatten)]
        run: RunArgs,
        /// First row of the window.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Sweep patch length or top-K and write sweep.csv.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Sweep axis and values, e.g. `K=1,3,5,7`; replaces configured sweeps.
        #[arg(long = "sweep")]
        sweeps: Vec<Sweep>,
    },
    /// Generate a synthetic multi-tone dataset CSV.
    Synth {
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_variates: usize,
        #[arg(long, default_value_t = 4000)]
        length: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        trend: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. `1,2,3`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    backbone: Option<Backbone>,
    /// Comma-separated prediction lengths.
    #[arg(long)]
    pred_len: Option<String>,
    #[arg(long)]
    patch_len: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_list(s)?;
        }
        if let Some(s) = self.strategy {
            cfg.augmentation.strategy = s;
        }
        if let Some(b) = self.backbone {
            cfg.model.backbone = b;
        }
        if let Some(p) = &self.pred_len {
            cfg.pred_lens = parse_list(p)?;
        }
        if let Some(p) = self.patch_len {
            cfg.augmentation.patch_len = p;
        }
        if let Some(k) = self.top_k {
            cfg.augmentation.top_k = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn open_log(dir: &Path, quiet: bool) -> Result<RunLog, Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    RunLog::open(&dir.join("run.log"), !quiet)
}

fn threads() -> Result<usize, Error> {
    match std::env::var("DAIF_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("DAIF_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Train { run } => {
            let cfg = run.load()?;
            let mut log = open_log(&cfg.output_dir, quiet)?;
            let out = experiment::run_train(&cfg, &mut log)?;
            println!("{}", out.results.display());
        }
        Command::Eval { run, checkpoints } => {
            let cfg = run.load()?;
            let mut log = open_log(&cfg.output_dir, quiet)?;
            let rows = experiment::run_eval(&cfg, &checkpoints, &mut log)?;
            print!("{}", experiment::format_results(&rows)?);
        }
        Command::AugmentPreview { run, index } => {
            let cfg = run.load()?;
            let files = experiment::run_augment_preview(&cfg, index, &cfg.output_dir)?;
            println!("{}", files.original.display());
            for p in files.tokens.iter().chain(&files.augmented).chain(&files.correlation) {
                println!("{}", p.display());
            }
        }
        Command::Bench { run, sweeps } => {
            let mut cfg = run.load()?;
            if !sweeps.is_empty() {
                cfg.sweep = sweeps;
                cfg.validate()?;
            }
            let mut log = open_log(&cfg.output_dir, quiet)?;
            experiment::run_bench(&cfg, threads()?, &mut log)?;
            println!("{}", cfg.output_dir.join("sweep.csv").display());
        }
        Command::Synth {
            out,
            n_variates,
            length,
            noise_sigma,
            trend,
            seed,
        } => {
            let spec = SynthSpec {
                n_variates,
                length,
                noise_sigma,
                trend,
                seed,
                ..Default::default()
            };
            experiment::run_synth(&spec, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
