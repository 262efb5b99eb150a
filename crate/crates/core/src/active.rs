//! The active-learning episode: score, select, query, refit, evaluate.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{score_candidates, select, CandidatePool, Method, ScoreOptions, DEFAULT_COMMITTEE};
use crate::bagging::Oracle;
use crate::error::{Error, Result};
use crate::model::{optimize_hyperparams, AdamConfig, AggregatedData, HyperParams, PosteriorState};
use crate::seed::{derive_seed, rng_from_seed};

/// How the precisions are initialized before the first query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum HyperInit {
    /// `ln lambda`, `ln beta` uniform on `[ln 0.5, ln 2]` under the episode seed.
    #[default]
    Random,
    Fixed { lambda: f64, beta: f64 },
}

impl HyperInit {
    fn draw(self, seed: u64) -> Result<HyperParams> {
        match self {
            HyperInit::Fixed { lambda, beta } => HyperParams::new(lambda, beta),
            HyperInit::Random => {
                let mut rng = rng_from_seed(derive_seed(seed, &["hyper-init"]));
                let (lo, hi) = (0.5f64.ln(), 2f64.ln());
                let ll = rng.random_range(lo..=hi);
                let lb = rng.random_range(lo..=hi);
                HyperParams::from_log(ll, lb)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub method: Method,
    pub queries: usize,
    pub seed: u64,
    pub hyper_init: HyperInit,
    pub adam: AdamConfig,
    pub committee: usize,
    /// Start each query's optimization from the previous optimum instead of
    /// the initial values.
    pub warm_start: bool,
    /// Skip hyperparameter optimization entirely.
    pub freeze_hyper: bool,
    /// Fill `wall_ms`; off by default so histories are reproducible bytewise.
    pub record_timing: bool,
}

impl EpisodeConfig {
    pub fn new(method: Method, queries: usize, seed: u64) -> Self {
        Self {
            method,
            queries,
            seed,
            hyper_init: HyperInit::Random,
            adam: AdamConfig::default(),
            committee: DEFAULT_COMMITTEE,
            warm_start: true,
            freeze_hyper: false,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// 1-based query index.
    pub query_index: usize,
    pub bag_id: usize,
    pub score: f64,
    pub lambda: f64,
    pub beta: f64,
    pub mse: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeHistory {
    pub records: Vec<QueryRecord>,
    pub posterior: PosteriorState,
}

/// Test instances in basis space with their (scaled) labels.
#[derive(Debug, Clone)]
pub struct TestSet {
    /// `K x M`.
    pub phi: DMatrix<f64>,
    pub labels: DVector<f64>,
}

/// State visible to an [`run_episode_observed`] observer after each query.
pub struct StepView<'a> {
    pub query_index: usize,
    pub posterior: &'a PosteriorState,
    pub labeled: usize,
    pub unlabeled: usize,
}

/// Mean squared error of the posterior-mean predictions `m^T phi(x)`.
pub fn evaluate_mse(post: &PosteriorState, test_phi: &DMatrix<f64>, test_labels: &DVector<f64>) -> Result<f64> {
    if test_labels.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if test_phi.ncols() != test_labels.len() || test_phi.nrows() != post.k() {
        return Err(Error::Dimension {
            expected: test_labels.len(),
            got: test_phi.ncols(),
        });
    }
    let preds = test_phi.tr_mul(post.mean());
    Ok((preds - test_labels).norm_squared() / test_labels.len() as f64)
}

pub fn run_episode(
    config: &EpisodeConfig,
    pool: &CandidatePool<'_>,
    oracle: &mut Oracle,
    test: &TestSet,
) -> Result<EpisodeHistory> {
    run_episode_observed(config, pool, oracle, test, |_| {})
}

/// [`run_episode`] with a callback after every refit.
pub fn run_episode_observed(
    config: &EpisodeConfig,
    pool: &CandidatePool<'_>,
    oracle: &mut Oracle,
    test: &TestSet,
    mut observe: impl FnMut(&StepView<'_>),
) -> Result<EpisodeHistory> {
    let n_bags = pool.bags.len();
    if config.queries < 1 || config.queries > n_bags {
        return Err(Error::invalid(format!(
            "query budget {} must lie in [1, {n_bags}]",
            config.queries
        )));
    }
    if oracle.pool_len() != pool.phi.ncols() || pool.features.nrows() != pool.phi.ncols() {
        return Err(Error::invalid(format!(
            "oracle covers {} instances but the pool has {}",
            oracle.pool_len(),
            pool.phi.ncols()
        )));
    }
    let k = pool.phi.nrows();
    let initial = config.hyper_init.draw(config.seed)?;
    let mut hyper = initial;
    let mut posterior = PosteriorState::prior(k, hyper);
    let mut data = AggregatedData::new(k);
    let mut unlabeled: Vec<usize> = (0..n_bags).collect();
    let mut records = Vec::with_capacity(config.queries);

    for t in 1..=config.queries {
        let started = Instant::now();
        let opts = ScoreOptions {
            committee: config.committee,
            seed: config.seed,
            step: t,
        };
        let scores = score_candidates(config.method, &posterior, pool, &unlabeled, &opts)?;
        let chosen_id = select(&scores)?;
        let pos = unlabeled
            .iter()
            .position(|&i| pool.bags[i].id == chosen_id)
            .expect("selected bag is a candidate");
        let chosen = &pool.bags[unlabeled.remove(pos)];
        let score = scores
            .iter()
            .find(|s| s.bag_id == chosen_id)
            .map(|s| s.score)
            .unwrap_or(f64::NAN);

        let output = oracle.query(chosen)?;
        data.push_bag(&pool.bag_phi(chosen), &chosen.weights, output)?;

        if !config.freeze_hyper {
            let start = if config.warm_start { hyper } else { initial };
            hyper = optimize_hyperparams(&data, start, &config.adam)?.hyper;
        }
        posterior = PosteriorState::fit(&data, hyper)?;
        let mse = evaluate_mse(&posterior, &test.phi, &test.labels)?;

        observe(&StepView {
            query_index: t,
            posterior: &posterior,
            labeled: data.len(),
            unlabeled: unlabeled.len(),
        });
        records.push(QueryRecord {
            query_index: t,
            bag_id: chosen_id,
            score,
            lambda: hyper.lambda,
            beta: hyper.beta,
            mse,
            wall_ms: if config.record_timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
    }
    Ok(EpisodeHistory { records, posterior })
}
