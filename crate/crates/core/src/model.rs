//! Bayesian linear basis model trained from aggregated outputs.
//!
//! With prior `w ~ N(0, 1/lambda I)` and per-instance noise precision
//! `beta`, a bag with feature matrix `Phi_a` (`K x N_a`) and weights
//! `theta_a` contributes only through `psi_a = Phi_a theta_a` and
//! `||theta_a||^2`:
//!
//! ```text
//! S^-1 = lambda I + beta sum_a psi_a psi_a^T / ||theta_a||^2
//! m    = beta S sum_a ybar_a psi_a / ||theta_a||^2
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bagging::LabeledBag;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior precision `lambda` and noise precision `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lambda: f64,
    pub beta: f64,
}

impl HyperParams {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "precisions must be positive and finite (lambda={lambda}, beta={beta})"
            )));
        }
        Ok(Self { lambda, beta })
    }

    pub fn from_log(log_lambda: f64, log_beta: f64) -> Result<Self> {
        Self::new(log_lambda.exp(), log_beta.exp())
    }

    pub fn to_log(self) -> [f64; 2] {
        [self.lambda.ln(), self.beta.ln()]
    }
}

/// Mean and variance of a scalar Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoment {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianMoment {
    /// Differential entropy `0.5 (ln var + ln 2 pi + 1)`.
    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.variance)
    }
}

pub fn gaussian_entropy(variance: f64) -> f64 {
    0.5 * (variance.ln() + LN_2PI + 1.0)
}

/// Moments of `theta^T y` for `y ~ N(mu, sigma)`.
pub fn weighted_sum_moments(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    theta: &DVector<f64>,
) -> Result<GaussianMoment> {
    let n = theta.len();
    if mu.len() != n {
        return Err(Error::Dimension { expected: n, got: mu.len() });
    }
    if sigma.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, got: sigma.nrows() });
    }
    let variance = clamp_variance((sigma * theta).dot(theta))?;
    Ok(GaussianMoment {
        mean: theta.dot(mu),
        variance,
    })
}

fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-12 {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("negative variance {v}")))
    }
}

/// `Phi_a theta_a`, the only direction in weight space a bag informs.
pub fn bag_direction(phi_a: &DMatrix<f64>, theta: &[f64]) -> Result<DVector<f64>> {
    if phi_a.ncols() != theta.len() {
        return Err(Error::Dimension {
            expected: phi_a.ncols(),
            got: theta.len(),
        });
    }
    Ok(phi_a * DVector::from_column_slice(theta))
}

fn norm_sq(theta: &[f64]) -> Result<f64> {
    let s: f64 = theta.iter().map(|t| t * t).sum();
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::invalid("bag weights must have positive finite norm"))
    }
}

/// Sufficient statistics of a labeled set: `psi_a`, `||theta_a||^2` and
/// the aggregated output of each labeled bag, in labeling order.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedData {
    k: usize,
    directions: Vec<DVector<f64>>,
    norms: Vec<f64>,
    outputs: Vec<f64>,
}

impl AggregatedData {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            directions: Vec::new(),
            norms: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn from_bags(k: usize, labeled: &[LabeledBag], phi_per_bag: &[DMatrix<f64>]) -> Result<Self> {
        if labeled.len() != phi_per_bag.len() {
            return Err(Error::Dimension {
                expected: labeled.len(),
                got: phi_per_bag.len(),
            });
        }
        let mut data = Self::new(k);
        for (lb, phi) in labeled.iter().zip(phi_per_bag) {
            data.push_bag(phi, &lb.bag.weights, lb.aggregated_output)?;
        }
        Ok(data)
    }

    pub fn push_bag(&mut self, phi_a: &DMatrix<f64>, theta: &[f64], output: f64) -> Result<()> {
        if phi_a.nrows() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                got: phi_a.nrows(),
            });
        }
        let psi = bag_direction(phi_a, theta)?;
        self.push(psi, norm_sq(theta)?, output)
    }

    pub fn push(&mut self, direction: DVector<f64>, weight_norm_sq: f64, output: f64) -> Result<()> {
        if direction.len() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                got: direction.len(),
            });
        }
        if weight_norm_sq.is_nan() || weight_norm_sq <= 0.0 || !output.is_finite() {
            return Err(Error::invalid("labeled bag needs positive weight norm and finite output"));
        }
        self.directions.push(direction);
        self.norms.push(weight_norm_sq);
        self.outputs.push(output);
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn directions(&self) -> &[DVector<f64>] {
        &self.directions
    }

    pub fn weight_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// `lambda I + beta sum_a psi_a psi_a^T / ||theta_a||^2`.
    pub fn precision(&self, hyper: HyperParams) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.k, self.k) * hyper.lambda;
        for (psi, &n) in self.directions.iter().zip(&self.norms) {
            p.ger(hyper.beta / n, psi, psi, 1.0);
        }
        p
    }

    /// `beta sum_a ybar_a psi_a / ||theta_a||^2`.
    pub fn projected_outputs(&self, hyper: HyperParams) -> DVector<f64> {
        let mut b = DVector::zeros(self.k);
        for ((psi, &n), &y) in self.directions.iter().zip(&self.norms).zip(&self.outputs) {
            b.axpy(hyper.beta * y / n, psi, 1.0);
        }
        b
    }
}

/// Cholesky factorization with bounded diagonal jitter: on failure add
/// `1e-10 * trace / K` to the diagonal, growing 10x per retry, three retries.
pub fn cholesky_with_jitter(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let base = 1e-10 * a.trace() / n.max(1) as f64;
    let mut jitter = base;
    for _ in 0..4 {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    let min_diag = a.diagonal().min();
    Err(Error::Numerical(format!(
        "Cholesky failed for {n}x{n} matrix after jitter up to {:e} (trace {:e}, min diagonal {:e})",
        jitter / 10.0,
        a.trace(),
        min_diag
    )))
}

/// Gaussian posterior `N(m, S)` over the basis weights, stored through the
/// lower Cholesky factor `L` of the precision `S^-1 = L L^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PosteriorRecord", try_from = "PosteriorRecord")]
pub struct PosteriorState {
    mean: DVector<f64>,
    prec_chol: DMatrix<f64>,
    hyper: HyperParams,
}

impl PosteriorState {
    /// The prior: `m = 0`, `S^-1 = lambda I`.
    pub fn prior(k: usize, hyper: HyperParams) -> Self {
        Self {
            mean: DVector::zeros(k),
            prec_chol: DMatrix::identity(k, k) * hyper.lambda.sqrt(),
            hyper,
        }
    }

    pub fn fit(data: &AggregatedData, hyper: HyperParams) -> Result<Self> {
        if data.is_empty() {
            return Ok(Self::prior(data.k(), hyper));
        }
        let chol = cholesky_with_jitter(data.precision(hyper))?;
        let mean = chol.solve(&data.projected_outputs(hyper));
        Ok(Self {
            mean,
            prec_chol: chol.unpack(),
            hyper,
        })
    }

    pub fn k(&self) -> usize {
        self.mean.len()
    }

    pub fn hyper(&self) -> HyperParams {
        self.hyper
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision_factor(&self) -> &DMatrix<f64> {
        &self.prec_chol
    }

    pub fn precision(&self) -> DMatrix<f64> {
        &self.prec_chol * self.prec_chol.transpose()
    }

    /// `S`, via `L^-T L^-1`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.k();
        let linv = self
            .prec_chol
            .solve_lower_triangular(&DMatrix::identity(k, k))
            .expect("Cholesky factor has a positive diagonal");
        linv.transpose() * linv
    }

    /// `L^-1 v`; `||L^-1 v||^2 = v^T S v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.prec_chol
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Column-wise [`whiten`](Self::whiten).
    pub fn whiten_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.prec_chol
            .solve_lower_triangular(m)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `v^T S v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }

    /// `log |S|`.
    pub fn log_det_covariance(&self) -> f64 {
        -2.0 * self.prec_chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.k() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.k(),
                got,
            })
        }
    }

    /// Predictive of one non-aggregated output:
    /// `N(m^T phi, 1/beta + phi^T S phi)`.
    pub fn predict_individual(&self, phi_x: &DVector<f64>) -> Result<GaussianMoment> {
        self.check_dim(phi_x.len())?;
        Ok(GaussianMoment {
            mean: self.mean.dot(phi_x),
            variance: 1.0 / self.hyper.beta + self.quad_form(phi_x),
        })
    }

    /// Predictive of a bag's aggregated output:
    /// `N(m^T Phi theta, theta^T (I/beta + Phi^T S Phi) theta)`.
    pub fn predict_aggregated(&self, phi_a: &DMatrix<f64>, theta: &[f64]) -> Result<GaussianMoment> {
        self.check_dim(phi_a.nrows())?;
        let psi = bag_direction(phi_a, theta)?;
        Ok(self.predict_direction(&psi, norm_sq(theta)?))
    }

    /// [`predict_aggregated`](Self::predict_aggregated) from a precomputed
    /// `psi = Phi theta` and `||theta||^2`.
    pub fn predict_direction(&self, psi: &DVector<f64>, weight_norm_sq: f64) -> GaussianMoment {
        GaussianMoment {
            mean: self.mean.dot(psi),
            variance: weight_norm_sq / self.hyper.beta + self.quad_form(psi),
        }
    }

    /// Draws `count` weight vectors from `N(m, S)` as `m + L^-T z`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let upper = self.prec_chol.transpose();
        (0..count)
            .map(|_| {
                let z = DVector::from_fn(self.k(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let offset = upper
                    .solve_upper_triangular(&z)
                    .expect("Cholesky factor has a positive diagonal");
                &self.mean + offset
            })
            .collect()
    }
}

/// JSON layout of a [`PosteriorState`]: `m`, the dense lower factor row by
/// row, and the two precisions.
#[derive(Serialize, Deserialize)]
struct PosteriorRecord {
    m: Vec<f64>,
    prec_chol: Vec<Vec<f64>>,
    lambda: f64,
    beta: f64,
}

impl From<PosteriorState> for PosteriorRecord {
    fn from(p: PosteriorState) -> Self {
        let k = p.k();
        Self {
            m: p.mean.as_slice().to_vec(),
            prec_chol: (0..k)
                .map(|r| (0..k).map(|c| p.prec_chol[(r, c)]).collect())
                .collect(),
            lambda: p.hyper.lambda,
            beta: p.hyper.beta,
        }
    }
}

impl TryFrom<PosteriorRecord> for PosteriorState {
    type Error = Error;

    fn try_from(r: PosteriorRecord) -> Result<Self> {
        let k = r.m.len();
        if r.prec_chol.len() != k || r.prec_chol.iter().any(|row| row.len() != k) {
            return Err(Error::invalid("posterior factor must be K x K"));
        }
        let prec_chol = DMatrix::from_fn(k, k, |i, j| if j <= i { r.prec_chol[i][j] } else { 0.0 });
        if prec_chol.diagonal().iter().any(|d| d.is_nan() || *d <= 0.0) {
            return Err(Error::invalid("posterior factor needs a positive diagonal"));
        }
        Ok(Self {
            mean: DVector::from_vec(r.m),
            prec_chol,
            hyper: HyperParams::new(r.lambda, r.beta)?,
        })
    }
}

/// Fits the posterior directly from labeled bags and their per-bag
/// feature matrices.
pub fn fit_posterior(
    labeled: &[LabeledBag],
    phi_per_bag: &[DMatrix<f64>],
    k: usize,
    hyper: HyperParams,
) -> Result<PosteriorState> {
    PosteriorState::fit(&AggregatedData::from_bags(k, labeled, phi_per_bag)?, hyper)
}

/// Log marginal likelihood of the aggregated outputs:
///
/// ```text
/// A/2 ln beta + K/2 ln lambda - 1/2 sum ln||theta_a||^2 + 1/2 ln|S|
///   - beta/2 sum ybar_a^2/||theta_a||^2 + 1/2 m^T S^-1 m - A/2 ln 2 pi
/// ```
pub fn log_marginal(data: &AggregatedData, hyper: HyperParams) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let post = PosteriorState::fit(data, hyper)?;
    let a = data.len() as f64;
    let k = data.k() as f64;
    let sum_log_norm: f64 = data.weight_norms().iter().map(|n| n.ln()).sum();
    let fit: f64 = data
        .outputs()
        .iter()
        .zip(data.weight_norms())
        .map(|(y, n)| y * y / n)
        .sum();
    let m_prec_m = (post.precision_factor().transpose() * post.mean()).norm_squared();
    Ok(0.5 * a * hyper.beta.ln() + 0.5 * k * hyper.lambda.ln() - 0.5 * sum_log_norm
        + 0.5 * post.log_det_covariance()
        - 0.5 * hyper.beta * fit
        + 0.5 * m_prec_m
        - 0.5 * a * LN_2PI)
}

/// The log marginal likelihood in the bag-space eigenbasis.
///
/// The aggregated outputs are jointly `N(0, C)` with
/// `C = D/beta + Psi^T Psi / lambda`, `D = diag(||theta_a||^2)`. Writing
/// `D^-1/2 Psi^T Psi D^-1/2 = U diag(e) U^T` once makes every later
/// evaluation of the objective and its `(ln lambda, ln beta)` gradient
/// O(A), which is what the per-query optimizer needs.
#[derive(Debug, Clone)]
pub struct EvidenceSpectrum {
    eigenvalues: Vec<f64>,
    projected: Vec<f64>,
    constant: f64,
}

impl EvidenceSpectrum {
    pub fn new(data: &AggregatedData) -> Self {
        let a = data.len();
        let scale: Vec<f64> = data.weight_norms().iter().map(|n| 1.0 / n.sqrt()).collect();
        let gram = DMatrix::from_fn(a, a, |i, j| {
            data.directions()[i].dot(&data.directions()[j]) * scale[i] * scale[j]
        });
        let eig = SymmetricEigen::new(gram);
        let scaled_outputs =
            DVector::from_iterator(a, data.outputs().iter().zip(&scale).map(|(y, s)| y * s));
        let projected = (eig.eigenvectors.transpose() * scaled_outputs)
            .as_slice()
            .to_vec();
        let sum_log_norm: f64 = data.weight_norms().iter().map(|n| n.ln()).sum();
        Self {
            eigenvalues: eig.eigenvalues.iter().map(|e| e.max(0.0)).collect(),
            projected,
            constant: -0.5 * sum_log_norm - 0.5 * a as f64 * LN_2PI,
        }
    }

    /// Objective and gradient with respect to `(ln lambda, ln beta)`.
    pub fn value_and_grad(&self, log_lambda: f64, log_beta: f64) -> (f64, [f64; 2]) {
        let inv_lambda = (-log_lambda).exp();
        let inv_beta = (-log_beta).exp();
        let mut value = self.constant;
        let mut grad = [0.0; 2];
        for (&e, &z) in self.eigenvalues.iter().zip(&self.projected) {
            let c = inv_beta + e * inv_lambda;
            let z2c = z * z / c;
            value -= 0.5 * (c.ln() + z2c);
            // d value / d c, times d c / d(ln lambda) and d c / d(ln beta)
            let dc = 0.5 * (z2c / c - 1.0 / c);
            grad[0] -= dc * e * inv_lambda;
            grad[1] -= dc * inv_beta;
        }
        (value, grad)
    }
}

/// Gradient of [`log_marginal`] with respect to `(ln lambda, ln beta)`.
pub fn log_marginal_gradient(data: &AggregatedData, hyper: HyperParams) -> [f64; 2] {
    let [ll, lb] = hyper.to_log();
    EvidenceSpectrum::new(data).value_and_grad(ll, lb).1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperFit {
    pub hyper: HyperParams,
    pub log_marginal: f64,
    pub steps_run: usize,
    /// Set when a non-finite objective stopped the run early; `hyper` is
    /// then the best finite iterate seen.
    pub aborted: Option<String>,
}

/// Adam ascent on the log marginal likelihood over `(ln lambda, ln beta)`.
pub fn optimize_hyperparams(
    data: &AggregatedData,
    init: HyperParams,
    adam: &AdamConfig,
) -> Result<HyperFit> {
    let spectrum = EvidenceSpectrum::new(data);
    let mut theta = init.to_log();
    let mut m = [0.0; 2];
    let mut v = [0.0; 2];
    let (mut value, mut grad) = spectrum.value_and_grad(theta[0], theta[1]);
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "log marginal likelihood is {value} at the initial hyperparameters {init:?}"
        )));
    }
    let mut best = (value, theta);

    for step in 1..=adam.steps {
        let bc1 = 1.0 - adam.beta1.powi(step as i32);
        let bc2 = 1.0 - adam.beta2.powi(step as i32);
        for i in 0..2 {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * grad[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
            theta[i] += adam.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + adam.epsilon);
        }
        (value, grad) = spectrum.value_and_grad(theta[0], theta[1]);
        let finite = value.is_finite()
            && grad.iter().all(|g| g.is_finite())
            && HyperParams::from_log(theta[0], theta[1]).is_ok();
        if !finite {
            let hyper = HyperParams::from_log(best.1[0], best.1[1])?;
            return Ok(HyperFit {
                hyper,
                log_marginal: best.0,
                steps_run: step,
                aborted: Some(format!(
                    "non-finite objective at step {step} (ln lambda={}, ln beta={})",
                    theta[0], theta[1]
                )),
            });
        }
        if value > best.0 {
            best = (value, theta);
        }
    }
    Ok(HyperFit {
        hyper: HyperParams::from_log(theta[0], theta[1])?,
        log_marginal: value,
        steps_run: adam.steps,
        aborted: None,
    })
}
