//! Gaussian-process regression with a squared-exponential (RBF) kernel.
//!
//! Zero prior mean, fixed hyperparameters. The posterior is refit from scratch
//! on every update through a Cholesky factorization of the Gram matrix; the
//! training sets seen here (one point per learning iteration) stay small.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Jitter added to the Gram diagonal when the factorization fails. Escalated
/// tenfold (at most six times) if the first attempt is still not enough.
pub const BASE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("length scale and signal variance must be positive and noise variance non-negative")]
    InvalidParams,
    #[error("input has {got} dimensions, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Gram matrix could not be factorized even with jitter")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpParams {
    fn check(&self) -> Result<(), GpError> {
        if self.length_scale > 0.0 && self.signal_variance > 0.0 && self.noise_variance >= 0.0 {
            Ok(())
        } else {
            Err(GpError::InvalidParams)
        }
    }

    /// k(a, b) = σ_f² exp(-|a - b|² / 2ℓ²)
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-sq / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
    jitter: f64,
}

/// GP posterior over a `dim`-dimensional input space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GpDocument", into = "GpDocument")]
pub struct GaussianProcess {
    params: GpParams,
    dim: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    factor: Option<Factor>,
}

#[derive(Serialize, Deserialize)]
struct GpDocument {
    length_scale: f64,
    signal_variance: f64,
    noise_variance: f64,
    dim: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl TryFrom<GpDocument> for GaussianProcess {
    type Error = GpError;

    fn try_from(doc: GpDocument) -> Result<Self, GpError> {
        let params = GpParams {
            length_scale: doc.length_scale,
            signal_variance: doc.signal_variance,
            noise_variance: doc.noise_variance,
        };
        let pairs = doc.inputs.into_iter().zip(doc.labels);
        GaussianProcess::fit(params, doc.dim, pairs)
    }
}

impl From<GaussianProcess> for GpDocument {
    fn from(gp: GaussianProcess) -> Self {
        GpDocument {
            length_scale: gp.params.length_scale,
            signal_variance: gp.params.signal_variance,
            noise_variance: gp.params.noise_variance,
            dim: gp.dim,
            inputs: gp.inputs,
            labels: gp.labels,
        }
    }
}

impl PartialEq for GaussianProcess {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.dim == other.dim
            && self.inputs == other.inputs
            && self.labels == other.labels
    }
}

impl GaussianProcess {
    /// Prior-only model.
    pub fn new(params: GpParams, dim: usize) -> Result<Self, GpError> {
        params.check()?;
        Ok(GaussianProcess { params, dim, inputs: Vec::new(), labels: Vec::new(), factor: None })
    }

    pub fn fit(
        params: GpParams,
        dim: usize,
        pairs: impl IntoIterator<Item = (Vec<f64>, f64)>,
    ) -> Result<Self, GpError> {
        let mut gp = Self::new(params, dim)?;
        for (x, y) in pairs {
            gp.check_dim(&x)?;
            gp.inputs.push(x);
            gp.labels.push(y);
        }
        gp.refactor()?;
        Ok(gp)
    }

    pub fn add_observation(&mut self, input: Vec<f64>, label: f64) -> Result<(), GpError> {
        self.check_dim(&input)?;
        self.inputs.push(input);
        self.labels.push(label);
        self.refactor()
    }

    pub fn params(&self) -> GpParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Jitter that was needed for the current factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.factor.as_ref().map_or(0.0, |f| f.jitter)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GpError> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(GpError::DimensionMismatch { expected: self.dim, got: x.len() })
        }
    }

    fn refactor(&mut self) -> Result<(), GpError> {
        let n = self.inputs.len();
        if n == 0 {
            self.factor = None;
            return Ok(());
        }
        let gram = DMatrix::from_fn(n, n, |i, j| self.params.kernel(&self.inputs[i], &self.inputs[j]));
        let labels = DVector::from_column_slice(&self.labels);
        let mut jitter = 0.0;
        for attempt in 0..8 {
            let mut k = gram.clone();
            for i in 0..n {
                k[(i, i)] += self.params.noise_variance + jitter;
            }
            if let Some(chol) = k.cholesky() {
                let weights = chol.solve(&labels);
                self.factor = Some(Factor { chol, weights, jitter });
                return Ok(());
            }
            jitter = if attempt == 0 { BASE_JITTER } else { jitter * 10.0 };
        }
        Err(GpError::Singular)
    }

    fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.params.kernel(xi, x)))
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        self.check_dim(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.params.signal_variance;
        let Some(factor) = &self.factor else {
            return (0.0, prior);
        };
        let kx = self.cross_covariance(x);
        let mean = kx.dot(&factor.weights);
        let v = factor
            .chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("Cholesky factor has a non-zero diagonal");
        let variance = (prior - v.dot(&v)).max(0.0);
        (mean, variance)
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64, GpError> {
        self.predict(x).map(|(m, _)| m)
    }
}

/// Upper confidence bound `mean + sqrt(beta) * stddev`.
pub fn ucb(model: &GaussianProcess, x: &[f64], beta: f64) -> Result<f64, GpError> {
    let (mean, var) = model.predict(x)?;
    Ok(ucb_from_moments(mean, var, beta))
}

pub fn ucb_from_moments(mean: f64, variance: f64, beta: f64) -> f64 {
    mean + beta.sqrt() * variance.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(noise: f64) -> GpParams {
        GpParams { length_scale: 0.5, signal_variance: 1.0, noise_variance: noise }
    }

    #[test]
    fn untrained_model_returns_prior() {
        let gp = GaussianProcess::new(GpParams { signal_variance: 2.5, ..params(0.0) }, 3).unwrap();
        assert_eq!(gp.predict(&[0.1, 5.0, 3.0]).unwrap(), (0.0, 2.5));
    }

    #[test]
    fn noiseless_single_point_interpolates() {
        let gp = GaussianProcess::fit(params(0.0), 2, [(vec![0.3, 0.4], 0.7)]).unwrap();
        let (m, v) = gp.predict(&[0.3, 0.4]).unwrap();
        assert!((m - 0.7).abs() < 1e-12);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn duplicate_inputs_trigger_jitter() {
        let gp = GaussianProcess::fit(params(0.0), 1, [(vec![1.0], 0.2), (vec![1.0], 0.2)]).unwrap();
        assert!(gp.jitter() >= BASE_JITTER);
        let (m, v) = gp.predict(&[1.0]).unwrap();
        assert!((m - 0.2).abs() < 1e-6);
        assert!(v < 1e-6);
    }

    #[test]
    fn variance_drops_after_observing_a_point() {
        let mut gp = GaussianProcess::fit(params(0.0), 1, [(vec![0.0], 0.1), (vec![2.0], 0.9)]).unwrap();
        let before = gp.predict(&[1.0]).unwrap().1;
        gp.add_observation(vec![1.0], 0.5).unwrap();
        let after = gp.predict(&[1.0]).unwrap().1;
        assert!(after <= before);
        assert!(after <= 1e-9);
    }

    #[test]
    fn rejects_bad_params_and_dimensions() {
        assert_eq!(GaussianProcess::new(params(-1.0), 1).unwrap_err(), GpError::InvalidParams);
        let gp = GaussianProcess::new(params(0.0), 2).unwrap();
        assert!(matches!(gp.predict(&[1.0]), Err(GpError::DimensionMismatch { .. })));
    }

    #[test]
    fn ucb_examples() {
        assert!((ucb_from_moments(0.5, 0.01, 4.0) - 0.7).abs() < 1e-12);
        assert_eq!(ucb_from_moments(0.5, 0.01, 0.0), 0.5);
        let gp = GaussianProcess::new(params(0.0), 2).unwrap();
        assert_eq!(ucb(&gp, &[3.0, 1.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn serde_round_trip_refits() {
        let gp = GaussianProcess::fit(params(1e-4), 2, [(vec![0.0, 1.0], 0.3), (vec![1.0, 0.0], 0.8)]).unwrap();
        let text = serde_json::to_string(&gp).unwrap();
        let back: GaussianProcess = serde_json::from_str(&text).unwrap();
        assert_eq!(gp, back);
        assert_eq!(gp.predict(&[0.5, 0.5]).unwrap(), back.predict(&[0.5, 0.5]).unwrap());
    }
}
