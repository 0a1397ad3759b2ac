//! The L2-regularized objective `L(w) + lambda |w|^2` of a single unit.
//!
//! The data term is a sum over samples. The regularizer's derivative is taken
//! as `lambda * w`, so one SGD step decays the weights by `1 - eta * lambda`;
//! `gamma`, `beta` and the plain unit's bias are never regularized.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Error, Result};
use crate::optim::GradSource;
use crate::normunits::{
    self, batch_stats, bn_preactivation, sigmoid, wn_preactivation, Batch, Nonlinearity,
    UnitParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossSpec {
    /// `(y - t)^2 / 2`
    SquaredError,
    /// Binary cross-entropy on a logit `y` with target `t` in {0, 1}.
    Logistic,
}

impl LossSpec {
    pub fn name(self) -> &'static str {
        match self {
            LossSpec::SquaredError => "squared_error",
            LossSpec::Logistic => "logistic",
        }
    }

    pub fn value(self, y: f64, t: f64) -> f64 {
        match self {
            LossSpec::SquaredError => 0.5 * (y - t) * (y - t),
            // log(1 + e^y) - t y
            LossSpec::Logistic => Nonlinearity::Softplus.eval(y) - t * y,
        }
    }

    pub fn d1(self, y: f64, t: f64) -> f64 {
        match self {
            LossSpec::SquaredError => y - t,
            LossSpec::Logistic => sigmoid(y) - t,
        }
    }

    pub fn d2(self, y: f64, _t: f64) -> f64 {
        match self {
            LossSpec::SquaredError => 1.0,
            LossSpec::Logistic => {
                let s = sigmoid(y);
                s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_error" => Ok(LossSpec::SquaredError),
            "logistic" => Ok(LossSpec::Logistic),
            other => Err(contract(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Plain,
    Bn,
    Wn,
}

impl UnitKind {
    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Plain => "plain",
            UnitKind::Bn => "bn",
            UnitKind::Wn => "wn",
        }
    }

    pub fn is_scale_invariant(self) -> bool {
        !matches!(self, UnitKind::Plain)
    }
}

impl FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(UnitKind::Plain),
            "bn" => Ok(UnitKind::Bn),
            "wn" => Ok(UnitKind::Wn),
            other => Err(contract(format!("unknown unit kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub batch: Batch,
    pub kind: UnitKind,
    pub g: Nonlinearity,
    pub loss: LossSpec,
    pub lambda: f64,
}

impl Problem {
    pub fn new(
        batch: Batch,
        kind: UnitKind,
        g: Nonlinearity,
        loss: LossSpec,
        lambda: f64,
    ) -> Result<Self> {
        if batch.targets().is_none() {
            return Err(contract("problem batch needs targets"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(contract(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if kind == UnitKind::Bn && batch.n() < 2 {
            return Err(contract("batch normalization needs at least two samples"));
        }
        Ok(Self { batch, kind, g, loss, lambda })
    }

    /// Same problem with a different regularization strength.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    fn targets(&self) -> &DVector<f64> {
        self.batch.targets().expect("validated in Problem::new")
    }
}

/// Pre-activations and outputs of the problem's unit.
fn unit_forward(prob: &Problem, p: &UnitParams) -> Result<(DVector<f64>, DVector<f64>)> {
    let z = match prob.kind {
        UnitKind::Plain => {
            if prob.batch.d() != p.w.len() {
                return Err(contract("dimension mismatch between batch and w"));
            }
            (prob.batch.x() * &p.w).add_scalar(p.bias)
        }
        UnitKind::Bn => bn_preactivation(&prob.batch, p, &batch_stats(&prob.batch, &p.w)?)?,
        UnitKind::Wn => wn_preactivation(&prob.batch, p)?,
    };
    let y = z.map(|v| prob.g.eval(v));
    Ok((z, y))
}

/// Unit outputs for the problem's unit kind.
pub fn outputs(prob: &Problem, p: &UnitParams) -> Result<DVector<f64>> {
    Ok(unit_forward(prob, p)?.1)
}

/// `sum_i loss_i(y_i)` without the regularizer.
pub fn data_loss(prob: &Problem, p: &UnitParams) -> Result<f64> {
    let y = outputs(prob, p)?;
    let t = prob.targets();
    Ok(y.iter().zip(t.iter()).map(|(&y, &t)| prob.loss.value(y, t)).sum())
}

/// `sum_i loss_i(y_i) + lambda |w|^2`.
pub fn loss_value(prob: &Problem, p: &UnitParams) -> Result<f64> {
    Ok(data_loss(prob, p)? + prob.lambda * p.w.norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub w: DVector<f64>,
    pub gamma: f64,
    pub beta: f64,
    /// Only nonzero for the plain unit.
    pub bias: f64,
}

fn loss_d1(prob: &Problem, y: &DVector<f64>) -> DVector<f64> {
    let t = prob.targets();
    DVector::from_fn(y.len(), |i, _| prob.loss.d1(y[i], t[i]))
}

/// Gradient of the data term with respect to `w` only.
pub fn data_grad(prob: &Problem, p: &UnitParams) -> Result<DVector<f64>> {
    let y = outputs(prob, p)?;
    let up = loss_d1(prob, &y);
    match prob.kind {
        UnitKind::Plain => normunits::grad_plain(&prob.batch, p, prob.g, &up),
        UnitKind::Bn => normunits::grad_bn(&prob.batch, p, prob.g, &up),
        UnitKind::Wn => normunits::grad_wn(&prob.batch, p, prob.g, &up),
    }
}

/// Gradient of the regularized objective; the regularizer adds `lambda * w` to
/// the weight block only.
pub fn loss_grad(prob: &Problem, p: &UnitParams) -> Result<LossGrad> {
    let (z, y) = unit_forward(prob, p)?;
    let up = loss_d1(prob, &y);
    // dL/dz_i
    let dz = DVector::from_fn(z.len(), |i, _| up[i] * prob.g.d1(z[i]));
    let mut grad = match prob.kind {
        UnitKind::Plain => LossGrad {
            w: normunits::grad_plain(&prob.batch, p, prob.g, &up)?,
            gamma: 0.0,
            beta: 0.0,
            bias: dz.sum(),
        },
        UnitKind::Bn | UnitKind::Wn => {
            let w = if prob.kind == UnitKind::Bn {
                normunits::grad_bn(&prob.batch, p, prob.g, &up)?
            } else {
                normunits::grad_wn(&prob.batch, p, prob.g, &up)?
            };
            // normalized pre-activation (z - beta) / gamma
            let gamma = if p.gamma != 0.0 {
                dz.iter().zip(z.iter()).map(|(d, z)| d * (z - p.beta) / p.gamma).sum()
            } else {
                0.0
            };
            LossGrad { w, gamma, beta: dz.sum(), bias: 0.0 }
        }
    };
    grad.w += &p.w * prob.lambda;
    Ok(grad)
}

/// Data Hessian of the BN unit under frozen statistics plus `lambda * I`.
pub fn loss_hessian(prob: &Problem, p: &UnitParams) -> Result<DMatrix<f64>> {
    Ok(data_hessian(prob, p)? + DMatrix::identity(p.w.len(), p.w.len()) * prob.lambda)
}

pub fn data_hessian(prob: &Problem, p: &UnitParams) -> Result<DMatrix<f64>> {
    if prob.kind != UnitKind::Bn {
        return Err(contract(format!(
            "Hessian available for bn units only, not {}",
            prob.kind.name()
        )));
    }
    let y = outputs(prob, p)?;
    let t = prob.targets();
    let d1 = loss_d1(prob, &y);
    let d2 = DVector::from_fn(y.len(), |i, _| prob.loss.d2(y[i], t[i]));
    normunits::hessian_bn_unit(&prob.batch, p, prob.g, &d1, &d2)
}

/// `|L_lambda(alpha w) - L_{lambda alpha^2}(w)|`.
pub fn scale_identity_gap(prob: &Problem, p: &UnitParams, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(contract(format!("alpha must be positive, got {alpha}")));
    }
    let scaled = loss_value(prob, &p.scaled(alpha))?;
    let transported = loss_value(&prob.with_lambda(prob.lambda * alpha * alpha), p)?;
    Ok((scaled - transported).abs())
}

/// The data term of a problem as a function of `w`, with `gamma`, `beta` and
/// the bias held at `params`.
#[derive(Debug, Clone, Copy)]
pub struct DataTerm<'a> {
    pub prob: &'a Problem,
    pub params: &'a UnitParams,
}

impl<'a> DataTerm<'a> {
    pub fn new(prob: &'a Problem, params: &'a UnitParams) -> Self {
        Self { prob, params }
    }
}

impl GradSource for DataTerm<'_> {
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        data_grad(self.prob, &self.params.with_w(w.clone()))
    }

    fn hessian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        data_hessian(self.prob, &self.params.with_w(w.clone()))
    }
}
