//! Self-contained check suites behind the `check-*` subcommands.

use nalgebra::{DMatrix, DVector};
use normscale::normunits::{forward_bn, forward_plain, forward_wn, Batch, Nonlinearity, UnitParams};
use normscale::objective::{scale_identity_gap, LossSpec, Problem, UnitKind};
use normscale::optim::{OptConfig, Rule};
use normscale::rng::{derive_seed, gaussian_vector, stream_rng};
use normscale::scalelab::{check_trajectory_equivalence, rescaled_config, EquivalenceReport};
use normscale::Result;
use rand::Rng;

pub const ALPHAS: [f64; 4] = [0.1, 0.5, 2.0, 10.0];

pub struct CheckLine {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    /// `true` when `value` must stay at or below `bound`, `false` when it must
    /// exceed it.
    pub upper: bool,
}

impl CheckLine {
    pub fn pass(&self) -> bool {
        if self.upper {
            self.value <= self.bound
        } else {
            self.value > self.bound
        }
    }
}

fn instance(seed: u64, loss: LossSpec, kind: UnitKind, g: Nonlinearity) -> Result<(Problem, UnitParams)> {
    let mut rng = stream_rng(seed, 0);
    let n = rng.random_range(4..24);
    let d = rng.random_range(2..9);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let t = match loss {
        LossSpec::SquaredError => gaussian_vector(&mut rng, n, 1.0),
        LossSpec::Logistic => DVector::from_fn(n, |_, _| f64::from(u8::from(rng.random::<bool>()))),
    };
    let p = UnitParams {
        w: gaussian_vector(&mut rng, d, 1.0),
        gamma: rng.random_range(0.5..2.0),
        beta: rng.random_range(-0.5..0.5),
        bias: rng.random_range(-0.5..0.5),
    };
    let lambda = rng.random_range(1e-3..1.0);
    Ok((Problem::new(Batch::with_targets(x, t)?, kind, g, loss, lambda)?, p))
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Output invariance of BN and WN units, the plain-unit control, and the
/// regularized objective identity, over `instances` random problems.
pub fn invariance_suite(instances: usize, master: u64) -> Result<Vec<CheckLine>> {
    let (mut bn, mut wn, mut plain, mut objective) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    for i in 0..instances as u64 {
        let g = Nonlinearity::ALL[i as usize % Nonlinearity::ALL.len()];
        let (prob, p) = instance(derive_seed(master, i), LossSpec::SquaredError, UnitKind::Bn, g)?;
        let b = &prob.batch;
        let (y_bn, _) = forward_bn(b, &p, g, None)?;
        let y_wn = forward_wn(b, &p, g)?;
        let y_plain = forward_plain(b, &p, Nonlinearity::Identity)?;
        for alpha in ALPHAS {
            let q = p.scaled(alpha);
            bn = bn.max(rel(&forward_bn(b, &q, g, None)?.0, &y_bn));
            wn = wn.max(rel(&forward_wn(b, &q, g)?, &y_wn));
            plain = plain.min(rel(&forward_plain(b, &q, Nonlinearity::Identity)?, &y_plain));
            objective = objective.max(scale_identity_gap(&prob, &p, alpha)?);
        }
    }
    Ok(vec![
        CheckLine { name: "bn output invariance", value: bn, bound: 1e-12, upper: true },
        CheckLine { name: "wn output invariance", value: wn, bound: 1e-12, upper: true },
        CheckLine { name: "plain output control", value: plain, bound: 1e-3, upper: false },
        CheckLine { name: "objective identity", value: objective, bound: 1e-12, upper: true },
    ])
}

/// Unit-scale configuration and problem used for `rule`: a BN tanh unit with
/// squared error for first-order rules, a BN softplus unit with logistic loss
/// for Newton (whose Hessian must stay well conditioned). Rates are small
/// enough that full-batch steps stay below the edge of stability; above it
/// rounding differences between the two runs grow geometrically.
pub fn default_setup(rule: Rule, eta: Option<f64>, lambda: Option<f64>, seed: u64) -> Result<(OptConfig, Problem, UnitParams)> {
    let (g, loss, eta0, lambda0) = match rule {
        Rule::Newton => (Nonlinearity::Softplus, LossSpec::Logistic, 0.5, 0.1),
        Rule::RmsProp => (Nonlinearity::Tanh, LossSpec::SquaredError, 0.001, 0.01),
        _ => (Nonlinearity::Tanh, LossSpec::SquaredError, 0.003, 0.01),
    };
    let cfg = OptConfig::new(rule, eta.unwrap_or(eta0), lambda.unwrap_or(lambda0));
    let (prob, p) = instance(seed, loss, UnitKind::Bn, g)?;
    Ok((cfg, prob, p))
}

/// Compares the run of the scaled configuration from `alpha w0` with the run
/// of `base` from `w0`.
pub fn equivalence(base: &OptConfig, prob: &Problem, p: &UnitParams, alpha: f64, steps: usize, tol: f64) -> Result<EquivalenceReport> {
    let (scaled, _) = rescaled_config(base, 1.0 / alpha)?;
    check_trajectory_equivalence(&scaled, prob, p, alpha, steps, tol)
}
