use nalgebra::DVector;

use crate::error::{contract, Error, Result};
use crate::objective::{DataTerm, Problem};
use crate::normunits::UnitParams;
use crate::optim::{self, OptConfig, OptState, Rule};

/// Learning rate of the equivalent update on unit-norm weights.
pub fn effective_lr(rule: Rule, eta: f64, wnorm: f64) -> Result<f64> {
    if !(wnorm > 0.0) || !wnorm.is_finite() {
        return Err(contract(format!("weight norm must be positive, got {wnorm}")));
    }
    Ok(match rule {
        Rule::Sgd | Rule::Momentum | Rule::Nesterov => eta / (wnorm * wnorm),
        Rule::RmsProp | Rule::Adam => eta / wnorm,
        Rule::NormalizedSgd | Rule::Newton => eta,
    })
}

/// How the state of a run started at `alpha w0` relates to the state of the
/// run started at `w0` under the rescaled configuration: each field is the
/// factor `scaled = factor * base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateScaling {
    pub weights: f64,
    pub momentum: f64,
    pub accumulator: f64,
}

impl StateScaling {
    pub const IDENTITY: StateScaling = StateScaling { weights: 1.0, momentum: 1.0, accumulator: 1.0 };

    /// State for the scaled run given the state of the base run.
    pub fn apply(&self, base: &OptState) -> OptState {
        OptState {
            v: &base.v * self.momentum,
            gacc: &base.gacc * self.accumulator,
            t: base.t,
        }
    }
}

/// The configuration under which a run from `w0` reproduces, up to the factor
/// `alpha`, a run of `cfg` from `alpha w0`.
pub fn rescaled_config(cfg: &OptConfig, alpha: f64) -> Result<(OptConfig, StateScaling)> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(contract(format!("alpha must be positive, got {alpha}")));
    }
    let a2 = alpha * alpha;
    let mut out = *cfg;
    let scaling = match cfg.rule {
        Rule::Sgd | Rule::Momentum | Rule::Nesterov => {
            out.eta = cfg.eta / a2;
            out.lambda = cfg.lambda * a2;
            StateScaling { weights: alpha, momentum: alpha, accumulator: 1.0 }
        }
        Rule::RmsProp => {
            out.eta = cfg.eta / alpha;
            out.lambda = cfg.lambda * a2;
            out.eps = cfg.eps * a2;
            StateScaling { weights: alpha, momentum: 1.0, accumulator: 1.0 / a2 }
        }
        Rule::Adam => {
            out.eta = cfg.eta / alpha;
            out.lambda = cfg.lambda * a2;
            out.eps = cfg.eps * alpha;
            StateScaling { weights: alpha, momentum: 1.0 / alpha, accumulator: 1.0 / a2 }
        }
        Rule::Newton => {
            out.lambda = cfg.lambda * a2;
            StateScaling { weights: alpha, momentum: 1.0, accumulator: 1.0 }
        }
        Rule::NormalizedSgd => StateScaling::IDENTITY,
    };
    Ok((out, scaling))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub alpha: f64,
    pub rule: Rule,
    pub steps: usize,
    pub max_rel_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Step at which either run failed, if one did.
    pub failed_at: Option<usize>,
}

/// Runs `steps` full-batch updates of `cfg` from `alpha * params.w` and of the
/// rescaled configuration from `params.w`, returning the largest
/// `|w_t - alpha w'_t| / |w_t|` seen. `gamma` and `beta` stay fixed.
pub fn check_trajectory_equivalence(
    cfg: &OptConfig,
    prob: &Problem,
    params: &UnitParams,
    alpha: f64,
    steps: usize,
    tol: f64,
) -> Result<EquivalenceReport> {
    if steps == 0 {
        return Err(contract("need at least one step"));
    }
    if cfg.rule == Rule::NormalizedSgd {
        return Err(contract("normalized_sgd fixes the weight norm; there is no scaled trajectory to compare"));
    }
    cfg.validate()?;
    let (base_cfg, scaling) = rescaled_config(cfg, alpha)?;
    let src = DataTerm::new(prob, params);

    let d = params.w.len();
    let mut base_w = params.w.clone();
    let mut base_st = OptState::zeros(d);
    let mut scaled_w: DVector<f64> = &params.w * alpha;
    let mut scaled_st = scaling.apply(&base_st);

    let mut report = EquivalenceReport {
        alpha,
        rule: cfg.rule,
        steps,
        max_rel_deviation: 0.0,
        tolerance: tol,
        pass: false,
        failed_at: None,
    };
    for t in 0..steps {
        let scaled = optim::step(&scaled_w, &src, &scaled_st, cfg);
        let base = optim::step(&base_w, &src, &base_st, &base_cfg);
        match (scaled, base) {
            (Ok(s), Ok(b)) => {
                (scaled_w, scaled_st) = s;
                (base_w, base_st) = b;
            }
            (Err(e), _) | (_, Err(e)) => {
                if matches!(e, Error::Contract(_)) {
                    return Err(e);
                }
                log::debug!("equivalence run for {} failed at step {t}: {e}", cfg.rule);
                report.failed_at = Some(t);
                report.max_rel_deviation = f64::INFINITY;
                return Ok(report);
            }
        }
        let dev = (&scaled_w - &base_w * scaling.weights).norm() / scaled_w.norm();
        report.max_rel_deviation = report.max_rel_deviation.max(dev);
    }
    report.pass = report.max_rel_deviation <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_lr_examples() {
        assert!((effective_lr(Rule::Sgd, 0.1, 2.0).unwrap() - 0.025).abs() < 1e-17);
        assert!((effective_lr(Rule::Adam, 0.1, 2.0).unwrap() - 0.05).abs() < 1e-17);
        assert_eq!(effective_lr(Rule::Newton, 0.3, 17.0).unwrap(), 0.3);
        assert_eq!(effective_lr(Rule::NormalizedSgd, 0.3, 17.0).unwrap(), 0.3);
        assert!(effective_lr(Rule::Sgd, 0.1, 0.0).is_err());
    }

    #[test]
    fn rescaled_config_examples() {
        for rule in Rule::ALL {
            let cfg = OptConfig::new(rule, 0.3, 0.02);
            let (same, s) = rescaled_config(&cfg, 1.0).unwrap();
            assert_eq!(same, cfg);
            assert_eq!((s.momentum, s.accumulator), (1.0, 1.0));
        }
        let (sgd, _) = rescaled_config(&OptConfig::new(Rule::Sgd, 0.4, 0.01), 2.0).unwrap();
        assert!((sgd.eta - 0.1).abs() < 1e-16 && (sgd.lambda - 0.04).abs() < 1e-16);
        let (adam, s) = rescaled_config(&OptConfig::new(Rule::Adam, 0.4, 0.01).with_eps(1e-8), 2.0).unwrap();
        assert!((adam.eta - 0.2).abs() < 1e-16);
        assert!((adam.eps - 2e-8).abs() < 1e-22);
        assert!((adam.lambda - 0.04).abs() < 1e-16);
        assert_eq!((s.momentum, s.accumulator), (0.5, 0.25));
        let (rms, s) = rescaled_config(&OptConfig::new(Rule::RmsProp, 0.4, 0.01).with_eps(1e-8), 2.0).unwrap();
        assert!((rms.eta - 0.2).abs() < 1e-16 && (rms.eps - 4e-8).abs() < 1e-22);
        assert_eq!(s.accumulator, 0.25);
        assert!(rescaled_config(&OptConfig::new(Rule::Sgd, 0.4, 0.01), -1.0).is_err());
    }
}
