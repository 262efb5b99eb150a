//! Predictive moments against Monte-Carlo draws of weights and noise.
//!
//! Weights are sampled from the conditioning oracle, not from the library.

use aggal::model::PosteriorState;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{condition, normal, random_instance, rng};

const DRAWS: usize = 100_000;

fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Mean error in standard errors, and relative variance error.
fn deviation(samples: &[f64], mean: f64, var: f64) -> (f64, f64) {
    let (m, v) = moments(samples);
    let se = (v / samples.len() as f64).sqrt();
    ((m - mean).abs() / se, (v - var).abs() / var)
}

/// Worst (mean z-score, relative variance error) over 20 instances.
pub fn worst_deviation(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 4, 5);
        let post = PosteriorState::fit(&inst.data(), inst.hyper).unwrap();
        // sample weights from the independent conditioning oracle
        let oracle = condition(&inst);
        let chol = oracle.cov.clone().cholesky().expect("posterior covariance is SPD");
        let lower = chol.l();
        let k = inst.k;
        let noise_sd = inst.hyper.beta.powf(-0.5);

        let phi_x = DVector::from_fn(k, |_, _| normal(&mut r));
        let n = r.random_range(1..=5);
        let phi_a = DMatrix::from_fn(k, n, |_, _| normal(&mut r));
        let theta: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.5)).collect();

        let mut single = Vec::with_capacity(DRAWS);
        let mut agg = Vec::with_capacity(DRAWS);
        for _ in 0..DRAWS {
            let z = DVector::from_fn(k, |_, _| normal(&mut r));
            let w = &oracle.mean + &lower * z;
            single.push(w.dot(&phi_x) + noise_sd * normal(&mut r));
            let ys = phi_a.tr_mul(&w);
            agg.push(ys.iter().zip(&theta).map(|(y, t)| t * (y + noise_sd * normal(&mut r))).sum());
        }

        let p = post.predict_individual(&phi_x).unwrap();
        let a = deviation(&single, p.mean, p.variance);
        let p = post.predict_aggregated(&phi_a, &theta).unwrap();
        let b = deviation(&agg, p.mean, p.variance);
        worst = (worst.0.max(a.0).max(b.0), worst.1.max(a.1).max(b.1));
    }
    worst
}
