//! Feature maps `phi(x)`: random Fourier features approximating an RBF-kernel
//! Gaussian process, and a plain `[x; 1]` map for small exact checks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    RandomFeatures,
    IdentityWithBias,
}

/// A feature map into `R^K` whose last coordinate is the constant 1.
///
/// For random features, `projection` is the row-major `(K-1) x D` matrix `B`
/// and `phases` the vector `c`; the map is
/// `[sqrt(2/(K-1)) cos(-B x + c), 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub input_dim: usize,
    #[serde(rename = "B", default)]
    pub projection: Vec<f64>,
    #[serde(rename = "c", default)]
    pub phases: Vec<f64>,
}

impl BasisSpec {
    /// Draws `B ~ N(0, 1)` elementwise and `c ~ Uniform[0, 2 pi)`.
    pub fn random_features(input_dim: usize, k: usize, seed: u64) -> Result<Self> {
        if input_dim < 1 || k < 2 {
            return Err(Error::invalid(format!(
                "random features need D >= 1 and K >= 2 (got D={input_dim}, K={k})"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let projection = (0..(k - 1) * input_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let phases = (0..k - 1).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        Ok(Self {
            kind: BasisKind::RandomFeatures,
            k,
            input_dim,
            projection,
            phases,
        })
    }

    pub fn identity_with_bias(input_dim: usize) -> Result<Self> {
        if input_dim < 1 {
            return Err(Error::invalid("identity basis needs D >= 1"));
        }
        Ok(Self {
            kind: BasisKind::IdentityWithBias,
            k: input_dim + 1,
            input_dim,
            projection: Vec::new(),
            phases: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BasisKind::RandomFeatures => {
                if self.k < 2
                    || self.projection.len() != (self.k - 1) * self.input_dim
                    || self.phases.len() != self.k - 1
                {
                    return Err(Error::invalid("random-feature basis has inconsistent shapes"));
                }
                if self.projection.iter().chain(&self.phases).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("random-feature basis has non-finite entries"));
                }
            }
            BasisKind::IdentityWithBias => {
                if self.k != self.input_dim + 1 {
                    return Err(Error::invalid("identity basis must have K = D + 1"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `B` as a `(K-1) x D` matrix.
    pub fn projection_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k.saturating_sub(1), self.input_dim, &self.projection)
    }

    /// Evaluates the map on every row of `x` (`N x D`), returning `K x N`.
    pub fn eval(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        let n = x.nrows();
        let mut phi = DMatrix::zeros(self.k, n);
        match self.kind {
            BasisKind::RandomFeatures => {
                let scale = (2.0 / (self.k - 1) as f64).sqrt();
                // (K-1) x N projections in one product
                let proj = self.projection_matrix() * x.transpose();
                for j in 0..n {
                    for r in 0..self.k - 1 {
                        phi[(r, j)] = scale * (-proj[(r, j)] + self.phases[r]).cos();
                    }
                }
            }
            BasisKind::IdentityWithBias => {
                phi.view_mut((0, 0), (self.input_dim, n)).copy_from(&x.transpose());
            }
        }
        phi.row_mut(self.k - 1).fill(1.0);
        Ok(phi)
    }

    /// Evaluates the map on one input vector.
    pub fn eval_one(&self, x: &[f64]) -> Result<DVector<f64>> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.eval(&m)?.column(0).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn shapes_at_default_size() {
        let spec = BasisSpec::random_features(8, 128, 1).unwrap();
        assert_eq!(spec.projection_matrix().shape(), (127, 8));
        assert_eq!(spec.phases.len(), 127);
        spec.validate().unwrap();
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = BasisSpec::random_features(5, 33, 99).unwrap();
        let b = BasisSpec::random_features(5, 33, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, BasisSpec::random_features(5, 33, 100).unwrap());
    }

    #[test]
    fn projection_entries_are_centered() {
        let (d, k) = (10, 1025);
        let spec = BasisSpec::random_features(d, k, 4).unwrap();
        let n = spec.projection.len() as f64;
        let mean = spec.projection.iter().sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!(spec.phases.iter().all(|&c| (0.0..2.0 * PI).contains(&c)));
    }

    #[test]
    fn bias_row_and_cosine_range() {
        let spec = BasisSpec::random_features(3, 16, 2).unwrap();
        let mut rng = rng_from_seed(5);
        let x = DMatrix::from_fn(20, 3, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
        let phi = spec.eval(&x).unwrap();
        assert_eq!(phi.shape(), (16, 20));
        assert!(phi.row(15).iter().all(|&v| v == 1.0));
        let bound = (2.0f64 / 15.0).sqrt();
        assert!(phi.rows(0, 15).iter().all(|v| v.abs() <= bound + 1e-15));
    }

    #[test]
    fn zero_input_zero_phase() {
        let mut spec = BasisSpec::random_features(4, 9, 2).unwrap();
        spec.phases.iter_mut().for_each(|c| *c = 0.0);
        let phi = spec.eval_one(&[0.0; 4]).unwrap();
        let expect = (2.0f64 / 8.0).sqrt();
        assert!(phi.rows(0, 8).iter().all(|&v| v == expect));
    }

    #[test]
    fn identity_basis_appends_bias() {
        let spec = BasisSpec::identity_with_bias(2).unwrap();
        let phi = spec.eval_one(&[3.0, -1.0]).unwrap();
        assert_eq!(phi.as_slice(), &[3.0, -1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = BasisSpec::random_features(3, 4, 0).unwrap();
        assert!(spec.eval(&DMatrix::zeros(2, 4)).is_err());
        assert!(BasisSpec::random_features(0, 4, 0).is_err());
        assert!(BasisSpec::random_features(2, 1, 0).is_err());
    }

    #[test]
    fn kernel_approximation_at_large_k() {
        let d = 4;
        let spec = BasisSpec::random_features(d, 4096, 11).unwrap();
        let mut rng = rng_from_seed(12);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let px = spec.eval_one(&x).unwrap();
            let py = spec.eval_one(&y).unwrap();
            let approx = px.rows(0, 4095).dot(&py.rows(0, 4095));
            let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            worst = worst.max((approx - (-dist2 / 2.0).exp()).abs());
        }
        assert!(worst < 0.1, "worst kernel error {worst}");
    }

    #[test]
    fn json_round_trip() {
        let spec = BasisSpec::random_features(2, 5, 3).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"random_features\""));
        let back: BasisSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
