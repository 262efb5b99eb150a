//! Command-line front end. Exit codes: 0 success, 2 usage or config error,
//! 3 data or numerical error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::acquisition::{score_candidates, CandidatePool, Method, ScoreOptions, DEFAULT_COMMITTEE};
use crate::bagging::{generate_bags, Bag};
use crate::dataset::{apply_standardizer, load_pool, DataFormat, LabelColumn};
use crate::error::{Error, Result};
use crate::experiment::{read_results, run_experiment, write_atomic, Checkpoint, ExperimentConfig};
use crate::summary::{curves_to_csv, summarize, summary_to_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aggal", version, about = "Active learning from aggregated outputs: experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every episode described by a JSON config and write the results CSV.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for episode-level parallelism.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Per-method means, paired t-tests against the best method, and curves.
    Summarize {
        /// Results CSV written by `run`.
        #[arg(long)]
        results: PathBuf,
        /// Summary CSV path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-query curve CSV path.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Print the bags generated over all rows of a dataset as JSON.
    GenBags {
        /// Dataset file.
        #[arg(long)]
        dataset: PathBuf,
        /// Seed for the bag draw.
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "libsvm")]
        format: FormatArg,
        /// CSV label column (name or 0-based index).
        #[arg(long)]
        label: Option<String>,
        /// Smallest bag size.
        #[arg(long, default_value_t = 1)]
        min: usize,
        /// Largest bag size.
        #[arg(long, default_value_t = 20)]
        max: usize,
    },
    /// Score bags (JSON, instances index dataset rows) under a checkpointed posterior.
    Score {
        /// Checkpoint JSON written by `run` with `checkpoints` set.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bags JSON, as printed by `gen-bags`.
        #[arg(long)]
        bags: PathBuf,
        /// Acquisition method; defaults to the checkpoint's method.
        #[arg(long)]
        method: Option<Method>,
        /// Seed for committee draws and `rand`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Committee size for `qbc` and `emcm`.
        #[arg(long, default_value_t = DEFAULT_COMMITTEE)]
        committee: usize,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Libsvm,
    Csv,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Libsvm => DataFormat::Libsvm,
            FormatArg::Csv => DataFormat::Csv,
        }
    }
}

fn label_arg(label: Option<String>) -> LabelColumn {
    match label {
        None => LabelColumn::default(),
        Some(s) => s.parse().map(LabelColumn::Index).unwrap_or(LabelColumn::Name(s)),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

fn config_error(path: &Path, err: Error) -> Error {
    match err {
        Error::Config(m) => Error::Config(m),
        other => Error::Config(format!("cannot load config {}: {other}", path.display())),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("{}: {e}", path.display()),
    })
}

fn score_bags(
    checkpoint: &Path,
    bags: &Path,
    method: Option<Method>,
    seed: u64,
    committee: usize,
) -> Result<String> {
    let ck: Checkpoint = read_json(checkpoint)?;
    ck.basis.validate()?;
    let bags: Vec<Bag> = read_json(bags)?;
    let pool = load_pool(&ck.dataset, ck.format, &ck.label_column)?;
    for b in &bags {
        b.validate()?;
        if let Some(&i) = b.instances.iter().find(|&&i| i >= pool.len()) {
            return Err(Error::invalid(format!("bag {} references row {i} of {}", b.id, pool.len())));
        }
    }
    let scaled = apply_standardizer(&pool, &ck.stats)?;
    let phi = ck.basis.eval(&scaled.features)?;
    if phi.nrows() != ck.posterior.k() {
        return Err(Error::Dimension {
            expected: ck.posterior.k(),
            got: phi.nrows(),
        });
    }
    let cand = CandidatePool {
        features: &scaled.features,
        phi: &phi,
        bags: &bags,
    };
    let all: Vec<usize> = (0..bags.len()).collect();
    let opts = ScoreOptions { committee, seed, step: 1 };
    let scores = score_candidates(method.unwrap_or(ck.method), &ck.posterior, &cand, &all, &opts)?;
    Ok(serde_json::to_string_pretty(&scores)?)
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let out = |stdout: &mut dyn Write, text: &str| {
        writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))
    };
    match cli.command {
        Command::Run { config, jobs } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| config_error(&config, e))?;
            if jobs == 0 {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let path = run_experiment(&cfg, jobs)?;
            out(stdout, &format!("wrote {}", path.display()))
        }
        Command::Summarize { results, out: dest, curves } => {
            let summary = summarize(&read_results(&results)?)?;
            let table = summary_to_csv(&summary.table)?;
            match dest {
                Some(p) => write_atomic(&p, &table)?,
                None => stdout.write_all(&table).map_err(|e| Error::io("<stdout>", e))?,
            }
            if let Some(p) = curves {
                write_atomic(&p, &curves_to_csv(&summary.curves)?)?;
            }
            Ok(())
        }
        Command::GenBags { dataset, seed, format, label, min, max } => {
            let pool = load_pool(&dataset, format.into(), &label_arg(label))?;
            let all: Vec<usize> = (0..pool.len()).collect();
            let bags = generate_bags(&all, min, max, seed)?;
            out(stdout, &serde_json::to_string_pretty(&bags)?)
        }
        Command::Score { checkpoint, bags, method, seed, committee } => {
            out(stdout, &score_bags(&checkpoint, &bags, method, seed, committee)?)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
