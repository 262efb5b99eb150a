//! Independent reference computations for the integration tests.
//!
//! Nothing in this file calls the library's posterior or evidence code: the oracles
//! work from the joint Gaussian over weights and individual outputs.
#![allow(dead_code)]

pub mod mc;

use aggal::basis::BasisSpec;
use aggal::model::{AggregatedData, HyperParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// One bag: basis columns (`K x N_a`), weights, observed output.
#[derive(Debug, Clone)]
pub struct RawBag {
    pub phi: DMatrix<f64>,
    pub theta: Vec<f64>,
    pub y: f64,
}

/// A small random problem in an `[x; 1]` basis.
#[derive(Debug, Clone)]
pub struct Instance {
    pub k: usize,
    pub bags: Vec<RawBag>,
    pub hyper: HyperParams,
}

impl Instance {
    pub fn data(&self) -> AggregatedData {
        let mut d = AggregatedData::new(self.k);
        for b in &self.bags {
            d.push_bag(&b.phi, &b.theta, b.y).unwrap();
        }
        d
    }
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// `K <= max_k`, `A <= max_a` bags of 1..=4 instances with nonzero weights.
pub fn random_instance(rng: &mut ChaCha8Rng, max_k: usize, max_a: usize) -> Instance {
    let k = rng.random_range(2..=max_k);
    let a = rng.random_range(1..=max_a);
    let basis = BasisSpec::identity_with_bias(k - 1).unwrap();
    let bags = (0..a)
        .map(|_| {
            let n = rng.random_range(1..=4);
            let x = DMatrix::from_fn(n, k - 1, |_, _| normal(rng));
            let mut theta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            theta[0] = if theta[0] >= 0.0 { theta[0] + 0.2 } else { theta[0] - 0.2 };
            RawBag {
                phi: basis.eval(&x).unwrap(),
                theta,
                y: 2.0 * normal(rng),
            }
        })
        .collect();
    let hyper = HyperParams::new(log_uniform(rng, 0.1, 10.0), log_uniform(rng, 0.1, 10.0)).unwrap();
    Instance { k, bags, hyper }
}

/// Joint-Gaussian conditioning: `w ~ N(0, I/lambda)`, individual outputs
/// `y = Phi^T w + eps`, `eps ~ N(0, I/beta)`, observed `ybar = Theta^T y`.
pub struct Conditioned {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `ln N(ybar; 0, Cov[ybar])`.
    pub log_evidence: f64,
}

pub fn condition(inst: &Instance) -> Conditioned {
    let k = inst.k;
    let HyperParams { lambda, beta } = inst.hyper;
    let n: usize = inst.bags.iter().map(|b| b.theta.len()).sum();
    let a = inst.bags.len();

    // all instances side by side, and the block-diagonal aggregation map
    let mut phi = DMatrix::zeros(k, n);
    let mut agg = DMatrix::zeros(n, a);
    let mut col = 0;
    for (j, b) in inst.bags.iter().enumerate() {
        for (i, &t) in b.theta.iter().enumerate() {
            phi.set_column(col, &b.phi.column(i));
            agg[(col, j)] = t;
            col += 1;
        }
    }
    let ybar = DVector::from_iterator(a, inst.bags.iter().map(|b| b.y));

    let cov_y = phi.transpose() * &phi / lambda + DMatrix::identity(n, n) / beta;
    let cov_wy = &phi / lambda;
    let cov_ybar = agg.transpose() * &cov_y * &agg;
    let cov_w_ybar = &cov_wy * &agg;

    let lu = cov_ybar.clone().lu();
    let gain = lu.solve(&cov_w_ybar.transpose()).unwrap().transpose();
    let mean = &gain * &ybar;
    let cov = DMatrix::identity(k, k) / lambda - &gain * cov_w_ybar.transpose();

    let quad = ybar.dot(&lu.solve(&ybar).unwrap());
    let log_det = lu.determinant().ln();
    let log_evidence = -0.5 * (quad + log_det + a as f64 * (2.0 * std::f64::consts::PI).ln());
    Conditioned {
        mean,
        cov,
        log_evidence,
    }
}

/// Sequential rank-one Bayesian updates, one bag at a time.
pub fn sequential(inst: &Instance) -> (DVector<f64>, DMatrix<f64>) {
    let k = inst.k;
    let mut m = DVector::zeros(k);
    let mut s = DMatrix::identity(k, k) / inst.hyper.lambda;
    for b in &inst.bags {
        let psi = &b.phi * DVector::from_column_slice(&b.theta);
        let noise: f64 = b.theta.iter().map(|t| t * t).sum::<f64>() / inst.hyper.beta;
        let s_psi = &s * &psi;
        let denom = psi.dot(&s_psi) + noise;
        m += &s_psi * ((b.y - psi.dot(&m)) / denom);
        s -= &s_psi * s_psi.transpose() / denom;
    }
    (m, s)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Central finite difference of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
