//! Replicated benchmark runs: dataset x method x replicate, written as CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{CandidatePool, Method, DEFAULT_COMMITTEE};
use crate::active::{run_episode, EpisodeConfig, HyperInit, TestSet};
use crate::bagging::{generate_bags, Bag, Oracle};
use crate::basis::BasisSpec;
use crate::dataset::{
    apply_standardizer, fit_scaler, load_pool, split_pool, DataFormat, InstancePool, LabelColumn,
    Scaling, StandardizationStats,
};
use crate::error::{Error, Result};
use crate::model::{AdamConfig, PosteriorState};
use crate::seed::derive_seed;

fn default_train_fraction() -> f64 {
    0.8
}
fn default_bag_min() -> usize {
    1
}
fn default_bag_max() -> usize {
    20
}
fn default_k() -> usize {
    128
}
fn default_t() -> usize {
    30
}
fn default_replicates() -> usize {
    50
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_adam_steps() -> usize {
    1000
}
fn default_adam_lr() -> f64 {
    1e-3
}
fn default_committee() -> usize {
    DEFAULT_COMMITTEE
}
fn default_true() -> bool {
    true
}
fn default_minmax() -> Scaling {
    Scaling::Minmax
}

/// JSON experiment description. Relative paths resolve against the config
/// file's directory when loaded through [`ExperimentConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
    /// Dataset label in the results; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub label_column: LabelColumn,
    #[serde(default = "default_minmax")]
    pub feature_scaling: Scaling,
    #[serde(default = "default_minmax")]
    pub label_scaling: Scaling,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_bag_min")]
    pub bag_min: usize,
    #[serde(default = "default_bag_max")]
    pub bag_max: usize,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    #[serde(rename = "T", default = "default_t")]
    pub t: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_adam_steps")]
    pub adam_steps: usize,
    #[serde(default = "default_adam_lr")]
    pub adam_lr: f64,
    #[serde(default = "default_committee")]
    pub committee: usize,
    #[serde(default)]
    pub hyper_init: HyperInit,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Record per-query wall-clock time (makes the CSV non-reproducible).
    #[serde(default)]
    pub timing: bool,
    /// Results CSV path.
    pub out: PathBuf,
    /// Directory for final-posterior checkpoints, one per episode.
    #[serde(default)]
    pub checkpoints: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.out = base.join(&cfg.out);
        if let Some(dir) = cfg.checkpoints.take() {
            cfg.checkpoints = Some(base.join(dir));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.bag_min < 1 || self.bag_min > self.bag_max {
            return bad(format!("invalid bag size range [{}, {}]", self.bag_min, self.bag_max));
        }
        if self.k < 2 {
            return bad("K must be at least 2".into());
        }
        if self.t < 1 {
            return bad("T must be at least 1".into());
        }
        if self.committee < 2 {
            return bad("committee must be at least 2".into());
        }
        if !(self.adam_lr > 0.0 && self.adam_lr.is_finite()) {
            return bad(format!("adam_lr must be positive, got {}", self.adam_lr));
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".to_owned())
        })
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            steps: self.adam_steps,
            learning_rate: self.adam_lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: Method,
    pub replicate: usize,
    pub query_index: usize,
    pub selected_bag_id: usize,
    pub mse: f64,
    pub lambda: f64,
    pub beta: f64,
    pub wall_ms: f64,
}

pub const RESULT_HEADER: [&str; 9] = [
    "dataset",
    "method",
    "replicate",
    "query_index",
    "selected_bag_id",
    "mse",
    "lambda",
    "beta",
    "wall_ms",
];

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Everything an episode of replicate `r` needs; shared across methods.
struct ReplicateSetup {
    features: DMatrix<f64>,
    phi: DMatrix<f64>,
    bags: Vec<Bag>,
    labels: Vec<f64>,
    test: TestSet,
    basis: BasisSpec,
    stats: StandardizationStats,
    train_indices: Vec<usize>,
}

fn prepare_replicate(cfg: &ExperimentConfig, name: &str, pool: &InstancePool, r: usize) -> Result<ReplicateSetup> {
    let rep = r.to_string();
    let seed = |what: &str| derive_seed(cfg.master_seed, &[name, what, &rep]);
    let split = split_pool(pool, cfg.train_fraction, seed("split"))?;
    let stats = fit_scaler(pool, &split.train_indices, cfg.feature_scaling, cfg.label_scaling)?;
    let scaled = apply_standardizer(pool, &stats)?;

    // Training instances are renumbered 0..n_train so bags index the
    // training matrix directly.
    let local: Vec<usize> = (0..split.train_indices.len()).collect();
    let bag_max = cfg.bag_max.min(local.len());
    let bags = generate_bags(&local, cfg.bag_min.min(bag_max), bag_max, seed("bags"))?;
    let basis = BasisSpec::random_features(pool.dim(), cfg.k, seed("basis"))?;

    let features = scaled.rows(&split.train_indices);
    let phi = basis.eval(&features)?;
    let labels = split.train_indices.iter().map(|&i| scaled.labels[i]).collect();
    let test = TestSet {
        phi: basis.eval(&scaled.rows(&split.test_indices))?,
        labels: split.test_indices.iter().map(|&i| scaled.labels[i]).collect::<Vec<_>>().into(),
    };
    Ok(ReplicateSetup {
        features,
        phi,
        bags,
        labels,
        test,
        basis,
        stats,
        train_indices: split.train_indices,
    })
}

/// The bag list every method of replicate `r` draws from.
pub fn replicate_bags(cfg: &ExperimentConfig, pool: &InstancePool, r: usize) -> Result<Vec<Bag>> {
    Ok(prepare_replicate(cfg, &cfg.dataset_name(), pool, r)?.bags)
}

/// Final state of one episode, enough to score new bags later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dataset: PathBuf,
    pub format: DataFormat,
    #[serde(default)]
    pub label_column: LabelColumn,
    pub stats: StandardizationStats,
    pub basis: BasisSpec,
    pub posterior: PosteriorState,
    pub method: Method,
    pub replicate: usize,
    /// Dataset row indices of the training split; bag instances index into it.
    pub train_indices: Vec<usize>,
}

struct EpisodeOutput {
    rows: Vec<ResultRow>,
    posterior: PosteriorState,
}

fn run_one(
    cfg: &ExperimentConfig,
    name: &str,
    setup: &ReplicateSetup,
    method: Method,
    r: usize,
) -> Result<EpisodeOutput> {
    let mut ep = EpisodeConfig::new(
        method,
        cfg.t,
        derive_seed(cfg.master_seed, &[name, method.name(), &r.to_string()]),
    );
    ep.hyper_init = cfg.hyper_init;
    ep.adam = cfg.adam();
    ep.committee = cfg.committee;
    ep.warm_start = cfg.warm_start;
    ep.record_timing = cfg.timing;

    let pool = CandidatePool {
        features: &setup.features,
        phi: &setup.phi,
        bags: &setup.bags,
    };
    let mut oracle = Oracle::new(setup.labels.clone());
    let history = run_episode(&ep, &pool, &mut oracle, &setup.test)?;
    let rows = history
        .records
        .iter()
        .map(|q| ResultRow {
            dataset: name.to_owned(),
            method,
            replicate: r,
            query_index: q.query_index,
            selected_bag_id: q.bag_id,
            mse: q.mse,
            lambda: q.lambda,
            beta: q.beta,
            wall_ms: q.wall_ms,
        })
        .collect();
    Ok(EpisodeOutput {
        rows,
        posterior: history.posterior,
    })
}

/// Runs every (replicate, method) episode and returns rows ordered by
/// replicate, then method (config order), then query index.
pub fn run_rows(cfg: &ExperimentConfig, pool: &InstancePool, jobs: usize) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let name = cfg.dataset_name();
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    threads.install(|| {
        let setups: Vec<ReplicateSetup> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| prepare_replicate(cfg, &name, pool, r))
            .collect::<Result<_>>()?;
        if let Some(smallest) = setups.iter().map(|s| s.bags.len()).min() {
            if cfg.t > smallest {
                return Err(Error::Config(format!(
                    "T = {} exceeds the {smallest} bags available",
                    cfg.t
                )));
            }
        }
        let tasks: Vec<(usize, Method)> = (0..cfg.replicates)
            .flat_map(|r| cfg.methods.iter().map(move |&m| (r, m)))
            .collect();
        let outputs: Vec<EpisodeOutput> = tasks
            .par_iter()
            .map(|&(r, m)| run_one(cfg, &name, &setups[r], m, r))
            .collect::<Result<_>>()?;

        if let Some(dir) = &cfg.checkpoints {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            for (&(r, m), out) in tasks.iter().zip(&outputs) {
                let ck = Checkpoint {
                    dataset: cfg.dataset.clone(),
                    format: cfg.format,
                    label_column: cfg.label_column.clone(),
                    stats: setups[r].stats.clone(),
                    basis: setups[r].basis.clone(),
                    posterior: out.posterior.clone(),
                    method: m,
                    replicate: r,
                    train_indices: setups[r].train_indices.clone(),
                };
                let path = dir.join(format!("{name}-{}-{r}.json", m.name()));
                write_atomic(&path, serde_json::to_string_pretty(&ck)?.as_bytes())?;
            }
        }
        Ok(outputs.into_iter().flat_map(|o| o.rows).collect())
    })
}

/// Loads the dataset, runs the experiment and writes the results CSV.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<PathBuf> {
    cfg.validate()?;
    let pool = load_pool(&cfg.dataset, cfg.format, &cfg.label_column)?;
    let rows = run_rows(cfg, &pool, jobs)?;
    write_results(&cfg.out, &rows)?;
    Ok(cfg.out.clone())
}

pub fn results_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.method.name().to_owned(),
            r.replicate.to_string(),
            r.query_index.to_string(),
            r.selected_bag_id.to_string(),
            format_float(r.mse),
            format_float(r.lambda),
            format_float(r.beta),
            format_float(r.wall_ms),
        ])?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_atomic(path, &results_to_csv(rows)?)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != RESULT_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected results header {header:?}"),
        });
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}
