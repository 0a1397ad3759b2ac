//! Single normalized units and a layer-normalized layer.
//!
//! Every forward here is a pure function of its inputs. Batch statistics use
//! the population convention (divisor `N`), and the BN gradient treats the
//! batch mean and standard deviation as constants.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Error, Result};

/// An `N x d` input matrix with optional per-sample targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    x: DMatrix<f64>,
    targets: Option<DVector<f64>>,
}

impl Batch {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(contract("batch must have at least one sample and one feature"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(contract("batch entries must be finite"));
        }
        Ok(Self { x, targets: None })
    }

    pub fn with_targets(x: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        let mut batch = Self::new(x)?;
        if targets.len() != batch.n() {
            return Err(contract(format!(
                "{} targets for {} samples",
                targets.len(),
                batch.n()
            )));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(contract("targets must be finite"));
        }
        batch.targets = Some(targets);
        Ok(batch)
    }

    /// Convenience constructor from row slices.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(contract("ragged rows"));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> Option<&DVector<f64>> {
        self.targets.as_ref()
    }
}

/// Parameters of one unit. `bias` is read only by the plain unit; `gamma` and
/// `beta` only by the normalized ones.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitParams {
    pub w: DVector<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub bias: f64,
}

impl UnitParams {
    pub fn new(w: DVector<f64>, gamma: f64, beta: f64) -> Self {
        Self { w, gamma, beta, bias: 0.0 }
    }

    pub fn plain(w: DVector<f64>, bias: f64) -> Self {
        Self { w, gamma: 1.0, beta: 0.0, bias }
    }

    /// Same parameters with the weight vector multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self { w: &self.w * alpha, ..self.clone() }
    }

    pub fn with_w(&self, w: DVector<f64>) -> Self {
        Self { w, ..self.clone() }
    }
}

/// Weights of a layer with `k` units: `w` is `d x k`, one column per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Nonlinearity {
    Identity,
    Relu,
    Tanh,
    Softplus,
}

impl Nonlinearity {
    pub const ALL: [Nonlinearity; 4] = [
        Nonlinearity::Identity,
        Nonlinearity::Relu,
        Nonlinearity::Tanh,
        Nonlinearity::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Softplus => "softplus",
        }
    }

    pub fn eval(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Identity => z,
            Nonlinearity::Relu => z.max(0.0),
            Nonlinearity::Tanh => z.tanh(),
            // ln(1 + e^z) without overflow for large z
            Nonlinearity::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    pub fn d1(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Nonlinearity::Softplus => sigmoid(z),
        }
    }

    /// Second derivative; zero almost everywhere for relu.
    pub fn d2(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Identity | Nonlinearity::Relu => 0.0,
            Nonlinearity::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Nonlinearity::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Nonlinearity::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| contract(format!("unknown nonlinearity `{s}`")))
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsMode {
    /// Statistics computed from the batch being evaluated.
    Train,
    /// Statistics fixed ahead of time.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnStats {
    pub mu: f64,
    pub sigma: f64,
    pub mode: StatsMode,
}

impl BnStats {
    /// Fixed statistics for evaluation.
    pub fn fixed(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma, mode: StatsMode::Test }
    }
}

/// Mean and population standard deviation of `values`.
///
/// Fails with [`Error::DegenerateBatch`] when the spread vanishes to within
/// rounding of the values' magnitude.
pub fn population_stats(values: &DVector<f64>) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(contract(format!("batch statistics need N >= 2, got {n}")));
    }
    let mu = values.sum() / n as f64;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    let scale = values.amax();
    if !sigma.is_finite() || sigma <= 1e-14 * scale || sigma == 0.0 {
        return Err(Error::DegenerateBatch);
    }
    Ok((mu, sigma))
}

fn check_dims(batch: &Batch, p: &UnitParams) -> Result<()> {
    if batch.d() != p.w.len() {
        return Err(contract(format!(
            "batch has {} features but w has length {}",
            batch.d(),
            p.w.len()
        )));
    }
    Ok(())
}

fn check_upstream(batch: &Batch, upstream: &DVector<f64>) -> Result<()> {
    if upstream.len() != batch.n() {
        return Err(contract(format!(
            "upstream has length {} for {} samples",
            upstream.len(),
            batch.n()
        )));
    }
    Ok(())
}

fn weight_norm(w: &DVector<f64>) -> Result<f64> {
    let norm = w.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(contract("weight vector must be nonzero and finite"));
    }
    Ok(norm)
}

/// Train-mode statistics of `Xw` for the batch.
pub fn batch_stats(batch: &Batch, w: &DVector<f64>) -> Result<BnStats> {
    if batch.d() != w.len() {
        return Err(contract("dimension mismatch between batch and w"));
    }
    let (mu, sigma) = population_stats(&(batch.x() * w))?;
    Ok(BnStats { mu, sigma, mode: StatsMode::Train })
}

/// `g(Xw + b)`: the unnormalized control unit.
pub fn forward_plain(batch: &Batch, p: &UnitParams, g: Nonlinearity) -> Result<DVector<f64>> {
    check_dims(batch, p)?;
    let z = batch.x() * &p.w;
    Ok(z.map(|v| g.eval(v + p.bias)))
}

/// Pre-activations `(Xw - mu) / sigma * gamma + beta` for the given stats.
pub fn bn_preactivation(batch: &Batch, p: &UnitParams, stats: &BnStats) -> Result<DVector<f64>> {
    check_dims(batch, p)?;
    if !(stats.sigma > 0.0) {
        return Err(Error::DegenerateBatch);
    }
    let xw = batch.x() * &p.w;
    Ok(xw.map(|v| (v - stats.mu) / stats.sigma * p.gamma + p.beta))
}

/// Batch-normalized unit.
///
/// With `stats = None` the unit runs in train mode and the batch statistics
/// are computed and returned; otherwise the supplied statistics are used as is.
pub fn forward_bn(
    batch: &Batch,
    p: &UnitParams,
    g: Nonlinearity,
    stats: Option<&BnStats>,
) -> Result<(DVector<f64>, BnStats)> {
    check_dims(batch, p)?;
    let stats = match stats {
        Some(s) => *s,
        None => batch_stats(batch, &p.w)?,
    };
    let z = bn_preactivation(batch, p, &stats)?;
    Ok((z.map(|v| g.eval(v)), stats))
}

pub fn wn_preactivation(batch: &Batch, p: &UnitParams) -> Result<DVector<f64>> {
    check_dims(batch, p)?;
    let norm = weight_norm(&p.w)?;
    let xw = batch.x() * &p.w;
    Ok(xw.map(|v| v / norm * p.gamma + p.beta))
}

/// Weight-normalized unit `g(Xw / |w| * gamma + beta)`.
pub fn forward_wn(batch: &Batch, p: &UnitParams, g: Nonlinearity) -> Result<DVector<f64>> {
    Ok(wn_preactivation(batch, p)?.map(|v| g.eval(v)))
}

/// Layer normalization of a single input over the `k` units of a layer.
pub fn forward_ln(x: &DVector<f64>, p: &LayerParams, g: Nonlinearity) -> Result<DVector<f64>> {
    let k = p.w.ncols();
    if x.len() != p.w.nrows() {
        return Err(contract(format!(
            "input has length {} but W has {} rows",
            x.len(),
            p.w.nrows()
        )));
    }
    if k < 2 || p.gamma.len() != k || p.beta.len() != k {
        return Err(contract("layer needs k >= 2 units with matching gamma and beta"));
    }
    if p.w.column_iter().any(|c| c.norm() == 0.0) {
        return Err(contract("every column of W must be nonzero"));
    }
    let xw = p.w.tr_mul(x);
    let (mu, sigma) = population_stats(&xw).map_err(|e| match e {
        Error::DegenerateBatch => Error::DegenerateLayer,
        other => other,
    })?;
    Ok(DVector::from_fn(k, |j, _| {
        g.eval((xw[j] - mu) / sigma * p.gamma[j] + p.beta[j])
    }))
}

/// Gradient of `sum_i upstream_i * y_i` for the plain unit, with respect to `w`.
pub fn grad_plain(
    batch: &Batch,
    p: &UnitParams,
    g: Nonlinearity,
    upstream: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(batch, p)?;
    check_upstream(batch, upstream)?;
    let z = batch.x() * &p.w;
    let coef = DVector::from_fn(batch.n(), |i, _| upstream[i] * g.d1(z[i] + p.bias));
    Ok(batch.x().tr_mul(&coef))
}

/// BN weight gradient under frozen statistics.
pub fn grad_bn_with_stats(
    batch: &Batch,
    p: &UnitParams,
    g: Nonlinearity,
    upstream: &DVector<f64>,
    stats: &BnStats,
) -> Result<DVector<f64>> {
    check_upstream(batch, upstream)?;
    let z = bn_preactivation(batch, p, stats)?;
    let scale = p.gamma / stats.sigma;
    let coef = DVector::from_fn(batch.n(), |i, _| upstream[i] * scale * g.d1(z[i]));
    Ok(batch.x().tr_mul(&coef))
}

/// `sum_i upstream_i * X_i / sigma * gamma * g'(z_i)`, statistics from the batch
/// and held constant.
pub fn grad_bn(
    batch: &Batch,
    p: &UnitParams,
    g: Nonlinearity,
    upstream: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(batch, p)?;
    let stats = batch_stats(batch, &p.w)?;
    grad_bn_with_stats(batch, p, g, upstream, &stats)
}

/// Exact weight gradient of the WN unit.
pub fn grad_wn(
    batch: &Batch,
    p: &UnitParams,
    g: Nonlinearity,
    upstream: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_upstream(batch, upstream)?;
    let z = wn_preactivation(batch, p)?;
    let norm = p.w.norm();
    let xw = batch.x() * &p.w;
    let coef = DVector::from_fn(batch.n(), |i, _| upstream[i] * p.gamma * g.d1(z[i]));
    // sum_i c_i (X_i / |w| - w (X_i . w) / |w|^3)
    let along_x = batch.x().tr_mul(&coef) / norm;
    let radial = coef.dot(&xw) / (norm * norm * norm);
    Ok(along_x - &p.w * radial)
}

/// Hessian of `sum_i loss_i(y_i)` for the BN unit under frozen statistics,
/// given first and second loss derivatives at each output.
pub fn hessian_bn_unit(
    batch: &Batch,
    p: &UnitParams,
    g: Nonlinearity,
    lossd1: &DVector<f64>,
    lossd2: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if g == Nonlinearity::Relu {
        return Err(Error::UnsupportedNonlinearity("relu"));
    }
    check_dims(batch, p)?;
    check_upstream(batch, lossd1)?;
    check_upstream(batch, lossd2)?;
    let stats = batch_stats(batch, &p.w)?;
    let z = bn_preactivation(batch, p, &stats)?;
    let scale = p.gamma / stats.sigma;
    // Both terms are rank one in X_i, so H = X^T diag(c) X.
    let coef = DVector::from_fn(batch.n(), |i, _| {
        let dy = scale * g.d1(z[i]);
        lossd2[i] * dy * dy + lossd1[i] * scale * scale * g.d2(z[i])
    });
    let x = batch.x();
    let weighted = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * coef[i]);
    Ok(x.tr_mul(&weighted))
}
