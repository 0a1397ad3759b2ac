//! Update rules as pure step functions over `(weights, state, config)`.
//!
//! `grad` arguments are always the gradient of the data term; each rule adds
//! the `lambda * w` regularizer term itself, evaluated at the point where the
//! gradient was taken.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    Sgd,
    Momentum,
    Nesterov,
    RmsProp,
    Adam,
    NormalizedSgd,
    Newton,
}

impl Rule {
    pub const ALL: [Rule; 7] = [
        Rule::Sgd,
        Rule::Momentum,
        Rule::Nesterov,
        Rule::RmsProp,
        Rule::Adam,
        Rule::NormalizedSgd,
        Rule::Newton,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::Momentum => "momentum",
            Rule::Nesterov => "nesterov",
            Rule::RmsProp => "rmsprop",
            Rule::Adam => "adam",
            Rule::NormalizedSgd => "normalized_sgd",
            Rule::Newton => "newton",
        }
    }

    pub fn needs_hessian(self) -> bool {
        self == Rule::Newton
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownRule(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptConfig {
    pub rule: Rule,
    pub eta: f64,
    pub lambda: f64,
    /// Momentum decay, also the RMSProp accumulator decay.
    pub rho: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub eps: f64,
}

impl OptConfig {
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(rule: Rule, eta: f64, lambda: f64) -> Self {
        Self { rule, eta, lambda, rho: 0.9, rho1: 0.9, rho2: 0.999, eps: Self::DEFAULT_EPS }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(contract(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(contract(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !unit(self.rho) || !unit(self.rho1) || !unit(self.rho2) {
            return Err(contract("decay rates must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(contract(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Per-rule mutable state, passed by value through each step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub v: DVector<f64>,
    pub gacc: DVector<f64>,
    pub t: usize,
}

impl OptState {
    pub fn zeros(d: usize) -> Self {
        Self { v: DVector::zeros(d), gacc: DVector::zeros(d), t: 0 }
    }

    fn check(&self, w: &DVector<f64>) -> Result<()> {
        if self.v.len() != w.len() || self.gacc.len() != w.len() {
            return Err(contract("optimizer state dimension does not match w"));
        }
        Ok(())
    }
}

/// Data-term gradient (and, for Newton, Hessian) at any queried weight vector.
pub trait GradSource {
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>>;

    fn hessian(&self, _w: &DVector<f64>) -> Result<DMatrix<f64>> {
        Err(contract("this gradient source provides no Hessian"))
    }
}

impl<F> GradSource for F
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self(w)
    }
}

fn finite(v: &DVector<f64>, step: usize, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { step, what })
    }
}

fn check_grad(w: &DVector<f64>, grad: &DVector<f64>, step: usize) -> Result<()> {
    if grad.len() != w.len() {
        return Err(contract("gradient dimension does not match w"));
    }
    finite(grad, step, "gradient")
}

/// `w - eta (grad + lambda w)`.
pub fn step_sgd(w: &DVector<f64>, grad: &DVector<f64>, cfg: &OptConfig) -> Result<DVector<f64>> {
    check_grad(w, grad, 0)?;
    let next = w - (grad + w * cfg.lambda) * cfg.eta;
    finite(&next, 0, "weights")?;
    Ok(next)
}

/// Classic or Nesterov momentum, chosen by `cfg.rule`.
///
/// `v' = rho v - eta grad_lambda(q)` and `w' = w + v'`, where `q = w` for the
/// classic rule and `q = w + rho v` for Nesterov.
pub fn step_momentum(
    w: &DVector<f64>,
    src: &dyn GradSource,
    st: &OptState,
    cfg: &OptConfig,
) -> Result<(DVector<f64>, OptState)> {
    st.check(w)?;
    let query = match cfg.rule {
        Rule::Momentum => w.clone(),
        Rule::Nesterov => w + &st.v * cfg.rho,
        other => return Err(contract(format!("step_momentum called with rule {other}"))),
    };
    let grad = src.grad(&query)?;
    check_grad(w, &grad, st.t)?;
    let v = &st.v * cfg.rho - (grad + &query * cfg.lambda) * cfg.eta;
    let next = w + &v;
    finite(&next, st.t, "weights")?;
    Ok((next, OptState { v, gacc: st.gacc.clone(), t: st.t + 1 }))
}

pub fn step_rmsprop(
    w: &DVector<f64>,
    grad: &DVector<f64>,
    st: &OptState,
    cfg: &OptConfig,
) -> Result<(DVector<f64>, OptState)> {
    st.check(w)?;
    check_grad(w, grad, st.t)?;
    let g = grad + w * cfg.lambda;
    let gacc = st.gacc.zip_map(&g, |a, gi| cfg.rho * a + (1.0 - cfg.rho) * gi * gi);
    let step = g.zip_map(&gacc, |gi, a| gi / (a + cfg.eps).sqrt());
    let next = w - step * cfg.eta;
    finite(&next, st.t, "weights")?;
    Ok((next, OptState { v: st.v.clone(), gacc, t: st.t + 1 }))
}

/// ADAM with the constant bias divisors `1 - rho1` and `1 - rho2`.
pub fn step_adam(
    w: &DVector<f64>,
    grad: &DVector<f64>,
    st: &OptState,
    cfg: &OptConfig,
) -> Result<(DVector<f64>, OptState)> {
    st.check(w)?;
    check_grad(w, grad, st.t)?;
    let g = grad + w * cfg.lambda;
    let v = st.v.zip_map(&g, |v, gi| cfg.rho1 * v + (1.0 - cfg.rho1) * gi);
    let gacc = st.gacc.zip_map(&g, |a, gi| cfg.rho2 * a + (1.0 - cfg.rho2) * gi * gi);
    let step = v.zip_map(&gacc, |v, a| {
        (v / (1.0 - cfg.rho1)) / ((a / (1.0 - cfg.rho2)).sqrt() + cfg.eps)
    });
    let next = w - step * cfg.eta;
    finite(&next, st.t, "weights")?;
    Ok((next, OptState { v, gacc, t: st.t + 1 }))
}

/// An SGD step followed by projection back onto the unit sphere.
pub fn step_normalized_sgd(
    w: &DVector<f64>,
    grad: &DVector<f64>,
    cfg: &OptConfig,
) -> Result<DVector<f64>> {
    project_unit(step_sgd(w, grad, cfg)?)
}

pub(crate) fn project_unit(v: DVector<f64>) -> Result<DVector<f64>> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateStep);
    }
    Ok(v / norm)
}

/// Largest condition number accepted by [`step_newton`].
pub const MAX_CONDITION: f64 = 1e12;

/// `w - eta H^{-1} g` with `g`, `H` the regularized gradient and Hessian.
pub fn step_newton(w: &DVector<f64>, src: &dyn GradSource, cfg: &OptConfig) -> Result<DVector<f64>> {
    let grad = src.grad(w)?;
    check_grad(w, &grad, 0)?;
    let hess = src.hessian(w)? + DMatrix::identity(w.len(), w.len()) * cfg.lambda;
    if hess.nrows() != w.len() || hess.ncols() != w.len() {
        return Err(contract("Hessian dimension does not match w"));
    }
    if hess.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence { step: 0, what: "hessian" });
    }
    let sv = hess.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular { cond });
    }
    let g = grad + w * cfg.lambda;
    let dir = hess.lu().solve(&g).ok_or(Error::Singular { cond })?;
    let next = w - dir * cfg.eta;
    finite(&next, 0, "weights")?;
    Ok(next)
}

/// One step of whichever rule `cfg` names.
pub fn step(
    w: &DVector<f64>,
    src: &dyn GradSource,
    st: &OptState,
    cfg: &OptConfig,
) -> Result<(DVector<f64>, OptState)> {
    let advance = |w: DVector<f64>| {
        (w, OptState { v: st.v.clone(), gacc: st.gacc.clone(), t: st.t + 1 })
    };
    let out = match cfg.rule {
        Rule::Sgd => src.grad(w).and_then(|g| step_sgd(w, &g, cfg)).map(advance),
        Rule::Momentum | Rule::Nesterov => step_momentum(w, src, st, cfg),
        Rule::RmsProp => src.grad(w).and_then(|g| step_rmsprop(w, &g, st, cfg)),
        Rule::Adam => src.grad(w).and_then(|g| step_adam(w, &g, st, cfg)),
        Rule::NormalizedSgd => src.grad(w).and_then(|g| step_normalized_sgd(w, &g, cfg)).map(advance),
        Rule::Newton => step_newton(w, src, cfg).map(advance),
    };
    out.map_err(|e| match e {
        Error::Divergence { what, .. } => Error::Divergence { step: st.t, what },
        other => other,
    })
}
