//! Acquisition functions over candidate bags and the argmax selection rule.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bagging::Bag;
use crate::error::{Error, Result};
use crate::model::{bag_direction, gaussian_entropy, PosteriorState};
use crate::seed::{derive_seed, rng_from_seed};

/// Committee size for QBC and EMCM when none is configured.
pub const DEFAULT_COMMITTEE: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Mutual information between the aggregated output and the weights.
    AggMi,
    /// Entropy of the aggregated-output predictive.
    AggEnt,
    /// Sum of per-instance mutual informations.
    Mi,
    /// Sum of per-instance predictive entropies.
    Ent,
    /// Query by committee: spread of posterior-sampled bag predictions.
    Qbc,
    /// Expected model change under the posterior committee.
    Emcm,
    /// Spread of the bag's input vectors.
    Var,
    MaxN,
    MinN,
    Rand,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::AggMi,
        Method::AggEnt,
        Method::Mi,
        Method::Ent,
        Method::Qbc,
        Method::Emcm,
        Method::Var,
        Method::MaxN,
        Method::MinN,
        Method::Rand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AggMi => "aggmi",
            Method::AggEnt => "aggent",
            Method::Mi => "mi",
            Method::Ent => "ent",
            Method::Qbc => "qbc",
            Method::Emcm => "emcm",
            Method::Var => "var",
            Method::MaxN => "maxn",
            Method::MinN => "minn",
            Method::Rand => "rand",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub bag_id: usize,
    pub score: f64,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    Max,
    Min,
}

fn positive_variance(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("non-positive predictive variance {v}")))
    }
}

fn weight_norm_sq(theta: &[f64]) -> Result<f64> {
    let n: f64 = theta.iter().map(|t| t * t).sum();
    if n > 0.0 {
        Ok(n)
    } else {
        Err(Error::invalid("bag weights have zero norm"))
    }
}

fn agg_entropy_from(post: &PosteriorState, psi: &DVector<f64>, norm: f64) -> Result<f64> {
    let var = positive_variance(post.predict_direction(psi, norm).variance)?;
    Ok(gaussian_entropy(var))
}

fn agg_mi_from(post: &PosteriorState, psi: &DVector<f64>, norm: f64) -> Result<f64> {
    let noise = norm / post.hyper().beta;
    let var = positive_variance(noise + post.quad_form(psi))?;
    Ok(0.5 * (var.ln() - noise.ln()))
}

/// `0.5 (ln theta^T (I/beta + Phi^T S Phi) theta + ln 2 pi + 1)`.
pub fn score_agg_entropy(post: &PosteriorState, phi_a: &DMatrix<f64>, theta: &[f64]) -> Result<f64> {
    let psi = bag_direction(phi_a, theta)?;
    agg_entropy_from(post, &psi, weight_norm_sq(theta)?)
}

/// `0.5 (ln theta^T (I/beta + Phi^T S Phi) theta - ln ||theta||^2 / beta)`.
pub fn score_agg_mi(post: &PosteriorState, phi_a: &DMatrix<f64>, theta: &[f64]) -> Result<f64> {
    let psi = bag_direction(phi_a, theta)?;
    agg_mi_from(post, &psi, weight_norm_sq(theta)?)
}

/// Per-instance predictive variances `1/beta + phi_n^T S phi_n` for the
/// columns of `phi_a`.
fn instance_variances(post: &PosteriorState, phi_a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if phi_a.nrows() != post.k() {
        return Err(Error::Dimension {
            expected: post.k(),
            got: phi_a.nrows(),
        });
    }
    let white = post.whiten_columns(phi_a);
    let noise = 1.0 / post.hyper().beta;
    Ok(white.column_iter().map(|c| noise + c.norm_squared()).collect())
}

/// Sum of per-instance predictive entropies; ignores covariance inside the bag.
pub fn score_sum_entropy(post: &PosteriorState, phi_a: &DMatrix<f64>) -> Result<f64> {
    Ok(instance_variances(post, phi_a)?.into_iter().map(gaussian_entropy).sum())
}

/// Sum of per-instance mutual informations `0.5 ln(beta var_n)`.
pub fn score_sum_mi(post: &PosteriorState, phi_a: &DMatrix<f64>) -> Result<f64> {
    let beta = post.hyper().beta;
    Ok(instance_variances(post, phi_a)?
        .into_iter()
        .map(|v| 0.5 * (v * beta).ln())
        .sum())
}

/// Draws a committee of `size` weight vectors from the posterior.
pub fn sample_committee(post: &PosteriorState, size: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if size < 2 {
        return Err(Error::invalid(format!("committee needs at least 2 members, got {size}")));
    }
    Ok(post.sample_weights(size, &mut rng_from_seed(seed)))
}

fn committee_variance(committee: &[DVector<f64>], psi: &DVector<f64>) -> f64 {
    let preds: Vec<f64> = committee.iter().map(|w| w.dot(psi)).collect();
    let n = preds.len() as f64;
    let mean = preds.iter().sum::<f64>() / n;
    preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n
}

fn committee_change(post: &PosteriorState, committee: &[DVector<f64>], psi: &DVector<f64>) -> f64 {
    let center = post.mean().dot(psi);
    let spread = committee.iter().map(|w| (w.dot(psi) - center).abs()).sum::<f64>()
        / committee.len() as f64;
    spread * psi.norm()
}

/// Population variance of the committee's aggregated predictions.
pub fn score_qbc(
    post: &PosteriorState,
    phi_a: &DMatrix<f64>,
    theta: &[f64],
    committee_size: usize,
    seed: u64,
) -> Result<f64> {
    let committee = sample_committee(post, committee_size, seed)?;
    Ok(committee_variance(&committee, &bag_direction(phi_a, theta)?))
}

/// Expected norm of the squared-loss gradient `(ybar - w^T psi) psi` when the
/// label is drawn from the posterior committee.
pub fn score_emcm(
    post: &PosteriorState,
    phi_a: &DMatrix<f64>,
    theta: &[f64],
    committee_size: usize,
    seed: u64,
) -> Result<f64> {
    let committee = sample_committee(post, committee_size, seed)?;
    Ok(committee_change(post, &committee, &bag_direction(phi_a, theta)?))
}

/// Trace of the population covariance of the bag's rows (`N_a x D`).
pub fn score_var(x_a: &DMatrix<f64>) -> f64 {
    let n = x_a.nrows() as f64;
    if x_a.nrows() < 2 {
        return 0.0;
    }
    x_a.column_iter()
        .map(|col| {
            let mean = col.sum() / n;
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .sum()
}

pub fn score_count(bag: &Bag, mode: CountMode) -> f64 {
    let n = bag.len() as f64;
    match mode {
        CountMode::Max => n,
        CountMode::Min => -n,
    }
}

/// Uniform `[0, 1)` scores, reproducible per `(seed, step)`.
pub fn score_random(bag_count: usize, seed: u64, step: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, &["rand", &step.to_string()]));
    (0..bag_count).map(|_| rng.random::<f64>()).collect()
}

/// Argmax by score; ties go to the smallest bag id.
pub fn select(scores: &[AcquisitionScore]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid("no candidate bags to select from"));
    }
    if let Some(bad) = scores.iter().find(|s| s.score.is_nan()) {
        return Err(Error::Numerical(format!("NaN score for bag {}", bad.bag_id)));
    }
    let best = scores
        .iter()
        .reduce(|best, s| {
            if s.score > best.score || (s.score == best.score && s.bag_id < best.bag_id) {
                s
            } else {
                best
            }
        })
        .expect("non-empty");
    Ok(best.bag_id)
}

/// Everything a scorer may look at besides the posterior: pool features
/// (`N x D`, for `var`), the basis evaluated on the pool (`K x N`), and the
/// bag list. Labels are not part of it.
#[derive(Debug, Clone, Copy)]
pub struct CandidatePool<'a> {
    pub features: &'a DMatrix<f64>,
    pub phi: &'a DMatrix<f64>,
    pub bags: &'a [Bag],
}

impl CandidatePool<'_> {
    pub fn bag_phi(&self, bag: &Bag) -> DMatrix<f64> {
        self.phi.select_columns(&bag.instances)
    }

    pub fn bag_features(&self, bag: &Bag) -> DMatrix<f64> {
        self.features.select_rows(&bag.instances)
    }

    fn direction(&self, bag: &Bag) -> DVector<f64> {
        let mut psi = DVector::zeros(self.phi.nrows());
        for (&i, &w) in bag.instances.iter().zip(&bag.weights) {
            psi.axpy(w, &self.phi.column(i), 1.0);
        }
        psi
    }
}

/// Per-step scoring options shared by all candidates.
#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub committee: usize,
    pub seed: u64,
    pub step: usize,
}

/// Scores the bags at positions `candidates` of `pool.bags`.
///
/// The committee for QBC/EMCM and the random stream for `rand` are drawn
/// once per step, so every candidate is judged by the same draws.
pub fn score_candidates(
    method: Method,
    post: &PosteriorState,
    pool: &CandidatePool<'_>,
    candidates: &[usize],
    opts: &ScoreOptions,
) -> Result<Vec<AcquisitionScore>> {
    let bags: Vec<&Bag> = candidates
        .iter()
        .map(|&i| {
            pool.bags
                .get(i)
                .ok_or_else(|| Error::invalid(format!("candidate {i} out of range")))
        })
        .collect::<Result<_>>()?;
    let wrap = |scores: Vec<f64>| {
        bags.iter()
            .zip(scores)
            .map(|(b, score)| AcquisitionScore {
                bag_id: b.id,
                score,
                method,
            })
            .collect()
    };

    let scores: Vec<f64> = match method {
        Method::AggMi => bags
            .iter()
            .map(|b| agg_mi_from(post, &pool.direction(b), b.weight_norm_sq()))
            .collect::<Result<_>>()?,
        Method::AggEnt => bags
            .iter()
            .map(|b| agg_entropy_from(post, &pool.direction(b), b.weight_norm_sq()))
            .collect::<Result<_>>()?,
        Method::Mi => bags
            .iter()
            .map(|b| score_sum_mi(post, &pool.bag_phi(b)))
            .collect::<Result<_>>()?,
        Method::Ent => bags
            .iter()
            .map(|b| score_sum_entropy(post, &pool.bag_phi(b)))
            .collect::<Result<_>>()?,
        Method::Qbc | Method::Emcm => {
            let seed = derive_seed(opts.seed, &["committee", &opts.step.to_string()]);
            let committee = sample_committee(post, opts.committee, seed)?;
            bags.iter()
                .map(|b| {
                    let psi = pool.direction(b);
                    if method == Method::Qbc {
                        committee_variance(&committee, &psi)
                    } else {
                        committee_change(post, &committee, &psi)
                    }
                })
                .collect()
        }
        Method::Var => bags.iter().map(|b| score_var(&pool.bag_features(b))).collect(),
        Method::MaxN => bags.iter().map(|b| score_count(b, CountMode::Max)).collect(),
        Method::MinN => bags.iter().map(|b| score_count(b, CountMode::Min)).collect(),
        Method::Rand => score_random(bags.len(), opts.seed, opts.step),
    };
    Ok(wrap(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AggregatedData, HyperParams};
    use approx::assert_abs_diff_eq;

    fn s(bag_id: usize, score: f64) -> AcquisitionScore {
        AcquisitionScore {
            bag_id,
            score,
            method: Method::Rand,
        }
    }

    #[test]
    fn select_examples() {
        assert_eq!(select(&[s(1, 0.5), s(2, 0.9)]).unwrap(), 2);
        assert_eq!(select(&[s(3, 0.7), s(1, 0.7)]).unwrap(), 1);
        assert_eq!(select(&[s(8, -1.0)]).unwrap(), 8);
        assert!(select(&[]).is_err());
        assert!(select(&[s(1, f64::NAN)]).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("AggMI".parse::<Method>().is_err());
    }

    #[test]
    fn unit_variance_entropy() {
        assert_abs_diff_eq!(gaussian_entropy(1.0), 1.418_938_533_204_672_7, epsilon = 1e-15);
    }

    #[test]
    fn mi_arithmetic_example() {
        // beta = 1, ||theta||^2 = 1, theta^T Phi^T S Phi theta = 1 with S = I
        let post = PosteriorState::prior(2, HyperParams::new(1.0, 1.0).unwrap());
        let phi = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let mi = score_agg_mi(&post, &phi, &[1.0]).unwrap();
        assert_abs_diff_eq!(mi, 0.5 * 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_weights_carry_no_information() {
        let post = PosteriorState::prior(2, HyperParams::new(0.5, 2.0).unwrap());
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.3, 0.3]);
        assert_eq!(score_agg_mi(&post, &phi, &[1.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn sum_entropy_doubles_with_repeated_instance() {
        let post = PosteriorState::prior(2, HyperParams::new(1.0, 1.0).unwrap());
        let one = DMatrix::from_column_slice(2, 1, &[0.4, 1.0]);
        let two = DMatrix::from_column_slice(2, 2, &[0.4, 1.0, 0.4, 1.0]);
        let a = score_sum_entropy(&post, &one).unwrap();
        let b = score_sum_entropy(&post, &two).unwrap();
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-14);
        assert!(score_sum_mi(&post, &two).unwrap() >= 0.0);
    }

    #[test]
    fn var_examples() {
        assert_eq!(score_var(&DMatrix::from_row_slice(1, 2, &[3.0, 4.0])), 0.0);
        assert_eq!(score_var(&DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 3.0, 4.0])), 0.0);
        assert_eq!(score_var(&DMatrix::from_row_slice(2, 1, &[0.0, 2.0])), 1.0);
    }

    #[test]
    fn count_examples() {
        let bag = Bag::summed(0, (0..7).collect()).unwrap();
        assert_eq!(score_count(&bag, CountMode::Max), 7.0);
        assert_eq!(score_count(&bag, CountMode::Min), -7.0);
    }

    #[test]
    fn random_scores() {
        let a = score_random(50, 3, 0);
        assert_eq!(a, score_random(50, 3, 0));
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
        let distinct = (1..=10).filter(|&t| score_random(50, 3, t) != a).count();
        assert_eq!(distinct, 10);
    }

    fn fitted(k: usize) -> PosteriorState {
        let mut data = AggregatedData::new(k);
        data.push(DVector::from_fn(k, |i, _| 1.0 + i as f64), 2.0, 1.0).unwrap();
        data.push(DVector::from_fn(k, |i, _| (i as f64).sin()), 1.0, -0.5).unwrap();
        PosteriorState::fit(&data, HyperParams::new(1.2, 4.0).unwrap()).unwrap()
    }

    #[test]
    fn committee_scores_vanish_without_spread() {
        let mut data = AggregatedData::new(2);
        data.push(DVector::from_vec(vec![1.0, 0.0]), 1.0, 1.0).unwrap();
        let tight = PosteriorState::fit(&data, HyperParams::new(1e16, 1.0).unwrap()).unwrap();
        let phi = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 1.0, -2.0]);
        assert!(score_qbc(&tight, &phi, &[1.0, 1.0], 25, 1).unwrap() < 1e-14);
        assert!(score_emcm(&tight, &phi, &[1.0, 1.0], 25, 1).unwrap() < 1e-7);
    }

    #[test]
    fn emcm_zero_direction_and_scaling() {
        let post = fitted(3);
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        assert_eq!(score_emcm(&post, &phi, &[1.0, -1.0], 10, 4).unwrap(), 0.0);
        let base = score_emcm(&post, &phi, &[1.0, 0.5], 10, 4).unwrap();
        let scaled = score_emcm(&post, &phi, &[3.0, 1.5], 10, 4).unwrap();
        assert_abs_diff_eq!(scaled, 9.0 * base, epsilon = 1e-10 * scaled);
    }

    #[test]
    fn qbc_converges_to_analytic_variance() {
        let post = fitted(3);
        let phi = DMatrix::from_row_slice(3, 2, &[0.2, 1.0, 0.5, -0.3, 1.0, 1.0]);
        let theta = [1.0, 1.0];
        let psi = bag_direction(&phi, &theta).unwrap();
        let exact = post.quad_form(&psi);
        let est = score_qbc(&post, &phi, &theta, 10_000, 17).unwrap();
        assert!((est - exact).abs() < 0.1 * exact, "{est} vs {exact}");
        assert_eq!(est, score_qbc(&post, &phi, &theta, 10_000, 17).unwrap());
        assert!(score_qbc(&post, &phi, &theta, 1, 17).is_err());
    }
}
