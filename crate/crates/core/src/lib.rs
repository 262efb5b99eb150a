//! Active learning for regression when only weighted sums of instance
//! outputs (bags) can be observed.
//!
//! The model is Bayesian linear regression on a random-feature basis; the
//! posterior, predictive moments and log marginal likelihood are all
//! closed-form in the aggregated data. On top of it sit the acquisition
//! functions (AggMI, AggEnt and the baselines), the episode loop, and an
//! experiment runner with paired-t summaries.

pub mod acquisition;
pub mod active;
pub mod bagging;
pub mod basis;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod model;
pub mod seed;
pub mod stats;
pub mod summary;

pub use acquisition::{select, AcquisitionScore, CandidatePool, Method};
pub use active::{run_episode, EpisodeConfig, EpisodeHistory, HyperInit, TestSet};
pub use bagging::{generate_bags, Bag, LabeledBag, Oracle};
pub use basis::{BasisKind, BasisSpec};
pub use dataset::{parse_csv, parse_libsvm, InstancePool, Split, StandardizationStats};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ResultRow};
pub use model::{
    fit_posterior, log_marginal, optimize_hyperparams, AdamConfig, AggregatedData, GaussianMoment,
    HyperParams, PosteriorState,
};
