//! One hidden layer of BN relu units feeding a linear logistic head.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{contract, Result};
use crate::normunits::{population_stats, sigmoid, Nonlinearity};
use crate::rng::random_direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self { input_dim: 10, hidden: 16 }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 2 || self.hidden < 4 {
            return Err(contract(format!(
                "network needs input_dim >= 2 and hidden >= 4, got {} and {}",
                self.input_dim, self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    /// `d x k`, one column per hidden unit.
    pub w: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub head_w: DVector<f64>,
    pub head_b: f64,
}

impl NetParams {
    /// Hidden columns with norm `init_scale` in random directions, `gamma = 1`,
    /// `beta = 0`, and a small random head.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, init_scale: f64, rng: &mut R) -> Self {
        let (d, k) = (spec.input_dim, spec.hidden);
        let mut w = DMatrix::zeros(d, k);
        for j in 0..k {
            w.set_column(j, &random_direction(rng, d, init_scale));
        }
        let head_w = crate::rng::gaussian_vector(rng, k, 1.0 / (k as f64).sqrt());
        Self { w, gamma: DVector::from_element(k, 1.0), beta: DVector::zeros(k), head_w, head_b: 0.0 }
    }

    pub fn hidden_flat(&self) -> DVector<f64> {
        DVector::from_column_slice(self.w.as_slice())
    }

    pub fn set_hidden_flat(&mut self, flat: &DVector<f64>) {
        self.w.copy_from_slice(flat.as_slice());
    }

    /// Root-mean-square of the hidden units' weight norms.
    pub fn hidden_norm(&self) -> f64 {
        let k = self.w.ncols() as f64;
        (self.w.column_iter().map(|c| c.norm_squared()).sum::<f64>() / k).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.gamma.iter()).chain(self.beta.iter()).chain(self.head_w.iter()).all(|v| v.is_finite())
            && self.head_b.is_finite()
    }
}

/// Per-unit normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
}

impl LayerStats {
    /// Exponential running average `self = decay * self + (1 - decay) * batch`.
    pub fn blend(&mut self, batch: &LayerStats, decay: f64) {
        self.mu = &self.mu * decay + &batch.mu * (1.0 - decay);
        self.sigma = &self.sigma * decay + &batch.sigma * (1.0 - decay);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub w: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub head_w: DVector<f64>,
    pub head_b: f64,
}

pub struct ForwardPass {
    /// Normalized pre-activations `(xw - mu) / sigma`.
    pub normalized: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub logits: DVector<f64>,
    pub stats: LayerStats,
}

/// Batch statistics of each hidden unit's pre-activation.
pub fn batch_layer_stats(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<LayerStats> {
    let a = x * w;
    let k = w.ncols();
    let mut mu = DVector::zeros(k);
    let mut sigma = DVector::zeros(k);
    for j in 0..k {
        let (m, s) = population_stats(&a.column(j).into_owned())?;
        mu[j] = m;
        sigma[j] = s;
    }
    Ok(LayerStats { mu, sigma })
}

/// Forward with the given statistics, or batch statistics when `None`.
pub fn forward(x: &DMatrix<f64>, p: &NetParams, stats: Option<&LayerStats>) -> Result<ForwardPass> {
    if x.ncols() != p.w.nrows() {
        return Err(contract("input dimension does not match the hidden layer"));
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => batch_layer_stats(x, &p.w)?,
    };
    let a = x * &p.w;
    let normalized = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] - stats.mu[j]) / stats.sigma[j]);
    let z = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| normalized[(i, j)] * p.gamma[j] + p.beta[j]);
    let h = z.map(|v| Nonlinearity::Relu.eval(v));
    let logits = (&h * &p.head_w).add_scalar(p.head_b);
    Ok(ForwardPass { normalized, z, h, logits, stats })
}

/// Mean logistic loss over the batch.
pub fn mean_loss(logits: &DVector<f64>, y: &[f64]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(y)
        .map(|(&l, &t)| Nonlinearity::Softplus.eval(l) - t * l)
        .sum();
    total / y.len() as f64
}

pub fn error_rate(logits: &DVector<f64>, y: &[f64]) -> f64 {
    let wrong = logits
        .iter()
        .zip(y)
        .filter(|(&l, &t)| (l > 0.0) != (t > 0.5))
        .count();
    wrong as f64 / y.len() as f64
}

/// Gradients of the mean logistic loss with the batch statistics of `pass`
/// held constant.
pub fn backward(x: &DMatrix<f64>, y: &[f64], p: &NetParams, pass: &ForwardPass) -> NetGrads {
    let n = y.len() as f64;
    let delta = DVector::from_fn(y.len(), |i, _| (sigmoid(pass.logits[i]) - y[i]) / n);
    let head_w = pass.h.tr_mul(&delta);
    let head_b = delta.sum();
    let dz = DMatrix::from_fn(pass.z.nrows(), pass.z.ncols(), |i, j| {
        delta[i] * p.head_w[j] * Nonlinearity::Relu.d1(pass.z[(i, j)])
    });
    let k = p.w.ncols();
    let gamma = DVector::from_fn(k, |j, _| dz.column(j).dot(&pass.normalized.column(j)));
    let beta = DVector::from_fn(k, |j, _| dz.column(j).sum());
    let mut w = x.tr_mul(&dz);
    for j in 0..k {
        let scale = p.gamma[j] / pass.stats.sigma[j];
        w.column_mut(j).scale_mut(scale);
    }
    NetGrads { w, gamma, beta, head_w, head_b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normunits::{grad_bn, Batch, UnitParams};
    use crate::rng::stream_rng;

    fn toy() -> (DMatrix<f64>, Vec<f64>, NetParams) {
        let mut rng = stream_rng(5, 0);
        let spec = NetSpec { input_dim: 3, hidden: 4 };
        let p = NetParams::init(&spec, 1.0, &mut rng);
        let x = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-2.0..2.0));
        let y = (0..12).map(|i| (i % 2) as f64).collect();
        (x, y, p)
    }

    #[test]
    fn hidden_gradient_matches_single_unit_gradient() {
        let (x, y, p) = toy();
        let pass = forward(&x, &p, None).unwrap();
        let g = backward(&x, &y, &p, &pass);
        let batch = Batch::new(x.clone()).unwrap();
        let n = y.len() as f64;
        for j in 0..4 {
            // upstream of unit j: dL/dh_ij
            let up = DVector::from_fn(12, |i, _| (sigmoid(pass.logits[i]) - y[i]) / n * p.head_w[j]);
            let unit = UnitParams::new(p.w.column(j).into_owned(), p.gamma[j], p.beta[j]);
            let expect = grad_bn(&batch, &unit, Nonlinearity::Relu, &up).unwrap();
            assert!((g.w.column(j) - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn head_gradient_matches_differences() {
        let (x, y, p) = toy();
        let pass = forward(&x, &p, None).unwrap();
        let g = backward(&x, &y, &p, &pass);
        let h = 1e-6;
        for j in 0..4 {
            let mut plus = p.clone();
            plus.head_w[j] += h;
            let mut minus = p.clone();
            minus.head_w[j] -= h;
            let lp = mean_loss(&forward(&x, &plus, Some(&pass.stats)).unwrap().logits, &y);
            let lm = mean_loss(&forward(&x, &minus, Some(&pass.stats)).unwrap().logits, &y);
            assert!(((lp - lm) / (2.0 * h) - g.head_w[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn hidden_scale_leaves_outputs_unchanged() {
        let (x, _, p) = toy();
        let mut scaled = p.clone();
        scaled.w *= 7.5;
        let a = forward(&x, &p, None).unwrap().logits;
        let b = forward(&x, &scaled, None).unwrap().logits;
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn flat_roundtrip_and_norm() {
        let (_, _, mut p) = toy();
        assert!((p.hidden_norm() - 1.0).abs() < 1e-14);
        let flat = p.hidden_flat() * 2.0;
        p.set_hidden_flat(&flat);
        assert!((p.hidden_norm() - 2.0).abs() < 1e-14);
        assert_eq!(p.hidden_flat(), flat);
    }
}
