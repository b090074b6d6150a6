//! Zero-mean Gaussian mixture prior on rain-streak residuals, fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{log_mixture_density, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    weights: Vec<f64>,
    variances: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != variances.len() {
            return Err(Error::Parameter("mixture needs K >= 1 weights and as many variances".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("mixture variances must be positive and finite".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter("mixture weights must be non-negative and sum to 1".into()));
        }
        Ok(GmmModel { weights, variances })
    }

    /// `K` equally weighted unit-variance components.
    pub fn unit(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("mixture needs K >= 1".into()));
        }
        Self::new(vec![1.0 / k as f64; k], vec![1.0; k])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Mean negative log-likelihood per sample.
    pub fn nll(&self, samples: &[f64]) -> f64 {
        -samples.iter().map(|&s| log_mixture_density(s, &self.weights, &self.variances)).sum::<f64>()
            / samples.len() as f64
    }
}

/// Per-pixel mean NLL of a residual map, differentiable in the residual.
pub fn gmm_nll_node(g: &mut Graph, residual: NodeId, model: &GmmModel) -> Result<NodeId> {
    g.gmm_nll(residual, &model.weights, &model.variances)
}

pub fn gmm_nll(residual: &Tensor, model: &GmmModel) -> Result<f64> {
    let mut g = Graph::frozen();
    let r = g.constant(residual.clone());
    let out = gmm_nll_node(&mut g, r, model)?;
    Ok(g.value(out).item())
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub model: GmmModel,
    /// NLL at initialization followed by the NLL after every iteration.
    pub trajectory: Vec<f64>,
    /// Set when some component variance hit [`VARIANCE_FLOOR`].
    pub collapsed: bool,
}

/// Fit a zero-mean `K`-component mixture to `samples`; means stay at 0.
pub fn gmm_em_fit(samples: &[f64], k: usize, iters: usize, seed: u64) -> Result<EmFit> {
    if k == 0 || iters == 0 {
        return Err(Error::Parameter("EM needs K >= 1 and at least one iteration".into()));
    }
    if samples.len() < k {
        return Err(Error::Parameter(format!("EM needs at least {k} samples, got {}", samples.len())));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("EM samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let second_moment = (samples.iter().map(|s| s * s).sum::<f64>() / n).max(VARIANCE_FLOOR);

    // Variances spread geometrically over two decades around the second
    // moment, with a small seeded jitter.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![1.0 / k as f64; k];
    let mut variances: Vec<f64> = (0..k)
        .map(|j| {
            let spread = if k == 1 { 1.0 } else { 10f64.powf(2.0 * j as f64 / (k - 1) as f64 - 1.0) };
            let jitter = if k == 1 { 1.0 } else { rng.gen_range(-0.1f64..0.1).exp() };
            (second_moment * spread * jitter).max(VARIANCE_FLOOR)
        })
        .collect();

    let mut trajectory = Vec::with_capacity(iters + 1);
    trajectory.push(GmmModel { weights: weights.clone(), variances: variances.clone() }.nll(samples));
    let mut collapsed = false;
    let mut resp = vec![0.0; k];
    for _ in 0..iters {
        let mut mass = vec![0.0; k];
        let mut weighted_sq = vec![0.0; k];
        let log_norm: Vec<f64> = weights
            .iter()
            .zip(&variances)
            .map(|(&w, &v)| w.ln() - 0.5 * (2.0 * std::f64::consts::PI * v).ln())
            .collect();
        for &s in samples {
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                resp[j] = log_norm[j] - 0.5 * s * s / variances[j];
                m = m.max(resp[j]);
            }
            let mut total = 0.0;
            for r in resp.iter_mut() {
                *r = (*r - m).exp();
                total += *r;
            }
            for j in 0..k {
                let gamma = resp[j] / total;
                mass[j] += gamma;
                weighted_sq[j] += gamma * s * s;
            }
        }
        for j in 0..k {
            weights[j] = mass[j] / n;
            let v = if mass[j] > 0.0 { weighted_sq[j] / mass[j] } else { 0.0 };
            if v < VARIANCE_FLOOR {
                collapsed = true;
            }
            variances[j] = v.max(VARIANCE_FLOOR);
        }
        // Renormalize against rounding so the weights sum to 1 within 1e-9.
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        trajectory.push(GmmModel { weights: weights.clone(), variances: variances.clone() }.nll(samples));
    }
    Ok(EmFit { model: GmmModel::new(weights, variances)?, trajectory, collapsed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn standard_normal_nll() {
        let unit = GmmModel::unit(1).unwrap();
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((gmm_nll(&Tensor::zeros(&[3, 4, 4]), &unit).unwrap() - half_log_2pi).abs() < 1e-12);
        assert!((half_log_2pi - 0.918939).abs() < 1e-6);
        let ones = Tensor::full(&[1, 4, 4], 1.0);
        assert!((gmm_nll(&ones, &unit).unwrap() - (half_log_2pi + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn duplicating_pixels_keeps_mean_nll() {
        let model = GmmModel::new(vec![0.3, 0.7], vec![0.02, 0.5]).unwrap();
        let t = Tensor::new(vec![1, 2, 3], vec![0.1, -0.4, 0.0, 0.9, -0.05, 0.3]).unwrap();
        let doubled = Tensor::new(vec![2, 2, 3], t.data().repeat(2)).unwrap();
        assert!((gmm_nll(&t, &model).unwrap() - gmm_nll(&doubled, &model).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(matches!(GmmModel::new(vec![1.0], vec![0.0]), Err(Error::Parameter(_))));
        assert!(matches!(GmmModel::new(vec![0.5, 0.6], vec![1.0, 1.0]), Err(Error::Parameter(_))));
        assert!(matches!(gmm_em_fit(&[0.1], 2, 5, 0), Err(Error::Parameter(_))));
        assert!(matches!(gmm_em_fit(&[0.1, 0.2], 1, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn collapse_is_floored_and_flagged() {
        let fit = gmm_em_fit(&[0.0; 50], 2, 5, 1).unwrap();
        assert!(fit.collapsed);
        assert!(fit.model.variances().iter().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn single_component_recovers_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 0.2).unwrap();
        let samples: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let fit = gmm_em_fit(&samples, 1, 50, 0).unwrap();
        assert!((fit.model.variances()[0] / 0.04 - 1.0).abs() < 0.1);
        assert!(fit.trajectory.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}
