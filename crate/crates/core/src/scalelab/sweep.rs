use crate::error::Result;
use crate::optim::{OptConfig, Rule};
use crate::par::{self, Execution};
use crate::rng::derive_seed;

use super::fit::{fit_loglog_slope, LogLogFit};
use super::noise::{NoiseModel, NormSimulation};

/// Stationary norm averaged over `seeds` independent runs; run `i` uses the
/// seed derived from `(master, i)`.
pub fn mean_stationary_norm(
    sim: &NormSimulation,
    seeds: usize,
    master: u64,
    exec: Execution,
) -> Result<f64> {
    let norms = par::map_range(exec, seeds, |i| {
        sim.run(derive_seed(master, i as u64)).map(|t| t.stationary_norm())
    });
    let norms = norms.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(norms.iter().sum::<f64>() / norms.len() as f64)
}

/// A family of simulations indexed by a positive abscissa, for fitting how the
/// stationary norm scales with it.
#[derive(Debug, Clone)]
pub struct ExponentSweep {
    pub points: Vec<(f64, NormSimulation)>,
}

impl ExponentSweep {
    /// Varies `eta / lambda` over `ratios` at fixed `eta * lambda = product`.
    pub fn eta_over_lambda(
        rule: Rule,
        product: f64,
        ratios: &[f64],
        noise: NoiseModel,
        steps: usize,
    ) -> Self {
        let points = ratios
            .iter()
            .map(|&r| {
                let eta = (product * r).sqrt();
                let lambda = (product / r).sqrt();
                (r, NormSimulation::new(OptConfig::new(rule, eta, lambda), noise, steps))
            })
            .collect();
        Self { points }
    }

    /// Varies the momentum decay; the abscissa is `1 - rho`.
    pub fn momentum_decay(eta: f64, lambda: f64, rhos: &[f64], noise: NoiseModel, steps: usize) -> Self {
        let points = rhos
            .iter()
            .map(|&rho| {
                let cfg = OptConfig::new(Rule::Momentum, eta, lambda).with_rho(rho);
                (1.0 - rho, NormSimulation::new(cfg, noise, steps))
            })
            .collect();
        Self { points }
    }

    /// Mean stationary norm at every point, then the log-log fit through them.
    /// All `(point, seed)` runs are independent work units.
    pub fn run(&self, seeds: usize, master: u64, exec: Execution) -> Result<(Vec<(f64, f64)>, LogLogFit)> {
        let jobs: Vec<(usize, usize)> = (0..self.points.len())
            .flat_map(|p| (0..seeds).map(move |s| (p, s)))
            .collect();
        let norms = par::map_indexed(exec, &jobs, |_, &(p, s)| {
            self.points[p].1.run(derive_seed(master, s as u64)).map(|t| t.stationary_norm())
        });
        let norms = norms.into_iter().collect::<Result<Vec<_>>>()?;
        let curve: Vec<(f64, f64)> = self
            .points
            .iter()
            .enumerate()
            .map(|(p, (x, _))| {
                let chunk = &norms[p * seeds..(p + 1) * seeds];
                (*x, chunk.iter().sum::<f64>() / seeds as f64)
            })
            .collect();
        let fit = fit_loglog_slope(&curve)?;
        Ok((curve, fit))
    }
}

/// Shorthand for [`ExponentSweep::eta_over_lambda`] followed by a run.
pub fn norm_exponent_sweep(
    rule: Rule,
    product: f64,
    ratios: &[f64],
    noise: NoiseModel,
    steps: usize,
    seeds: usize,
    master: u64,
    exec: Execution,
) -> Result<LogLogFit> {
    Ok(ExponentSweep::eta_over_lambda(rule, product, ratios, noise, steps)
        .run(seeds, master, exec)?
        .1)
}
