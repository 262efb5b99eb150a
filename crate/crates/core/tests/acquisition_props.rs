mod common;

use aggal::acquisition::{
    score_agg_entropy, score_agg_mi, score_emcm, score_qbc, score_sum_entropy, score_sum_mi, select,
    AcquisitionScore,
};
use aggal::model::{gaussian_entropy, HyperParams, PosteriorState};
use aggal::Method;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_posterior(r: &mut rand_chacha::ChaCha8Rng) -> PosteriorState {
    let inst = random_instance(r, 4, 5);
    PosteriorState::fit(&inst.data(), inst.hyper).unwrap()
}

fn random_bag(r: &mut rand_chacha::ChaCha8Rng, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = r.random_range(1..=6);
    let phi = DMatrix::from_fn(k, n, |_, _| normal(r));
    let mut theta: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    theta[0] += 0.1f64.copysign(theta[0]);
    (phi, theta)
}

/// Entropy of the aggregated observation noise `N(0, ||theta||^2 / beta)`.
fn noise_entropy(theta: &[f64], beta: f64) -> f64 {
    let norm: f64 = theta.iter().map(|t| t * t).sum();
    0.5 * ((norm / beta).ln() + (2.0 * std::f64::consts::PI).ln() + 1.0)
}

#[test]
fn mutual_information_is_entropy_minus_noise_entropy() {
    let mut r = rng(200);
    for case in 0..1000 {
        let post = random_posterior(&mut r);
        let (phi, theta) = random_bag(&mut r, post.k());
        let mi = score_agg_mi(&post, &phi, &theta).unwrap();
        let ent = score_agg_entropy(&post, &phi, &theta).unwrap();
        let rhs = ent - noise_entropy(&theta, post.hyper().beta);
        assert!((mi - rhs).abs() < 1e-10, "case {case}: {mi} vs {rhs}");
        assert!(mi >= 0.0, "case {case}: negative MI {mi}");
    }
}

#[test]
fn singleton_bags_reduce_to_instance_scores() {
    let mut r = rng(201);
    for case in 0..200 {
        let post = random_posterior(&mut r);
        let phi_x = DVector::from_fn(post.k(), |_, _| normal(&mut r));
        let phi = DMatrix::from_column_slice(post.k(), 1, phi_x.as_slice());
        let var = post.predict_individual(&phi_x).unwrap().variance;
        let agg_ent = score_agg_entropy(&post, &phi, &[1.0]).unwrap();
        assert!((agg_ent - gaussian_entropy(var)).abs() < 1e-12, "case {case}");
        assert!((score_sum_entropy(&post, &phi).unwrap() - agg_ent).abs() < 1e-12);
        let agg_mi = score_agg_mi(&post, &phi, &[1.0]).unwrap();
        assert!((score_sum_mi(&post, &phi).unwrap() - agg_mi).abs() < 1e-12, "case {case}");
    }
}

#[test]
fn equal_weight_norms_give_equal_argmax() {
    let mut r = rng(202);
    for _ in 0..50 {
        let post = random_posterior(&mut r);
        let bags: Vec<DMatrix<f64>> = (0..12)
            .map(|_| DMatrix::from_fn(post.k(), 3, |_, _| normal(&mut r)))
            .collect();
        let ones = [1.0; 3];
        let scores = |f: fn(&PosteriorState, &DMatrix<f64>, &[f64]) -> aggal::Result<f64>, m| {
            bags.iter()
                .enumerate()
                .map(|(i, phi)| AcquisitionScore {
                    bag_id: i,
                    score: f(&post, phi, &ones).unwrap(),
                    method: m,
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(
            select(&scores(score_agg_mi, Method::AggMi)).unwrap(),
            select(&scores(score_agg_entropy, Method::AggEnt)).unwrap()
        );
    }
}

#[test]
fn committee_scores_vanish_without_uncertainty() {
    let hyper = HyperParams::new(1e12, 1.0).unwrap();
    let post = PosteriorState::prior(3, hyper);
    let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 1.0, 1.0]);
    assert!(score_qbc(&post, &phi, &[1.0, 1.0], 25, 1).unwrap() < 1e-10);
    assert!(score_emcm(&post, &phi, &[1.0, 1.0], 25, 1).unwrap() < 1e-5);
    let zero = DMatrix::zeros(3, 2);
    let loose = PosteriorState::prior(3, HyperParams::new(1.0, 1.0).unwrap());
    assert_eq!(score_emcm(&loose, &zero, &[1.0, 1.0], 25, 1).unwrap(), 0.0);
    assert_eq!(score_qbc(&loose, &zero, &[1.0, 1.0], 25, 1).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emcm_scales_quadratically(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut r = rng(seed);
        let post = random_posterior(&mut r);
        let (phi, theta) = random_bag(&mut r, post.k());
        let scaled: Vec<f64> = theta.iter().map(|t| c * t).collect();
        let base = score_emcm(&post, &phi, &theta, 25, seed).unwrap();
        let big = score_emcm(&post, &phi, &scaled, 25, seed).unwrap();
        prop_assert!((big - c * c * base).abs() <= 1e-9 * big.abs().max(1e-12));
    }

    #[test]
    fn scores_are_pure(seed in any::<u64>()) {
        let mut r = rng(seed);
        let post = random_posterior(&mut r);
        let (phi, theta) = random_bag(&mut r, post.k());
        prop_assert_eq!(score_qbc(&post, &phi, &theta, 5, 3).unwrap(), score_qbc(&post, &phi, &theta, 5, 3).unwrap());
        prop_assert_eq!(score_agg_mi(&post, &phi, &theta).unwrap(), score_agg_mi(&post, &phi, &theta).unwrap());
    }
}
