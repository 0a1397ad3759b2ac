use super::train::{train_small_net, RunRecord, TrainConfig};
use crate::error::{contract, Error, Result};
use crate::optim::Rule;
use crate::par::{map_indexed, Execution};
use crate::rng::derive_seed;
use crate::scalelab::{fit_loglog_slope, LogLogFit};

/// `n` values evenly spaced in `log10` from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub etas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: usize,
}

impl Default for Grid {
    /// 7 x 7 over `lambda` in [1e-5, 1e1] and `eta` in [1e-4, 1e1], one seed.
    fn default() -> Self {
        Self { etas: log_space(1e-4, 1e1, 7), lambdas: log_space(1e-5, 1e1, 7), seeds: 1 }
    }
}

impl Grid {
    pub fn with_seeds(mut self, seeds: usize) -> Self {
        self.seeds = seeds;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.etas.is_empty() || self.lambdas.is_empty() || self.seeds == 0 {
            return Err(contract("grid needs at least one eta, one lambda and one seed"));
        }
        if self.etas.iter().chain(&self.lambdas).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(contract("grid values must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One trained cell of a sweep. The metrics of diverged cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub optimizer: Rule,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub final_norm: f64,
    pub train_loss: f64,
    pub val_error: f64,
    pub test_error: f64,
    pub diverged: bool,
}

impl SweepCell {
    pub fn from_record(optimizer: Rule, eta: f64, lambda: f64, r: &RunRecord) -> Self {
        Self {
            optimizer,
            eta,
            lambda,
            seed: r.seed,
            final_norm: r.final_norm,
            train_loss: r.train_loss,
            val_error: r.val_error,
            test_error: r.test_error,
            diverged: r.diverged(),
        }
    }
}

/// Cells sorted by (optimizer, lambda, eta, seed).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    cells: Vec<SweepCell>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(b.abs())
}

/// Sorted distinct values, merging those equal to 1e-8 relative.
fn distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| same(*a, *b));
    v
}

impl SweepTable {
    pub fn new(mut cells: Vec<SweepCell>) -> Self {
        cells.sort_by(|a, b| {
            a.optimizer
                .name()
                .cmp(b.optimizer.name())
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.eta.total_cmp(&b.eta))
                .then(a.seed.cmp(&b.seed))
        });
        Self { cells }
    }

    pub fn cells(&self) -> &[SweepCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn optimizers(&self) -> Vec<Rule> {
        let mut out: Vec<Rule> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.optimizer) {
                out.push(c.optimizer);
            }
        }
        out
    }

    pub fn for_optimizer(&self, rule: Rule) -> SweepTable {
        SweepTable { cells: self.cells.iter().filter(|c| c.optimizer == rule).cloned().collect() }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        distinct(self.cells.iter().map(|c| c.lambda).collect())
    }

    pub fn etas(&self) -> Vec<f64> {
        distinct(self.cells.iter().map(|c| c.eta).collect())
    }

    fn single_optimizer(&self) -> Result<()> {
        if self.optimizers().len() > 1 {
            return Err(contract("table mixes optimizers; select one with for_optimizer"));
        }
        Ok(())
    }

    /// Cells at one (eta, lambda) point, across seeds.
    pub fn at(&self, eta: f64, lambda: f64) -> Vec<&SweepCell> {
        self.cells.iter().filter(|c| same(c.eta, eta) && same(c.lambda, lambda)).collect()
    }

    /// Mean of `f` over the seeds of one point, or `None` when the point is
    /// missing or any of its seeds diverged.
    pub fn point_mean(&self, eta: f64, lambda: f64, f: impl Fn(&SweepCell) -> f64) -> Option<f64> {
        let cells = self.at(eta, lambda);
        if cells.is_empty() || cells.iter().any(|c| c.diverged) {
            return None;
        }
        Some(cells.iter().map(|c| f(c)).sum::<f64>() / cells.len() as f64)
    }

    /// Share of cells that diverged.
    pub fn diverged_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.diverged).count() as f64 / self.cells.len() as f64
    }
}

/// Trains every (eta, lambda, seed) cell of `grid` for `base.opt.rule`.
/// Replicate `r` uses seed `derive_seed(master, r)` in every cell, so cells
/// differ only in their hyper-parameters.
pub fn run_grid_sweep(grid: &Grid, base: &TrainConfig, master: u64, exec: Execution) -> Result<SweepTable> {
    grid.validate()?;
    base.validate()?;
    let mut jobs = Vec::with_capacity(grid.etas.len() * grid.lambdas.len() * grid.seeds);
    for &lambda in &grid.lambdas {
        for &eta in &grid.etas {
            for r in 0..grid.seeds {
                jobs.push((eta, lambda, derive_seed(master, r as u64)));
            }
        }
    }
    let rule = base.opt.rule;
    let results = map_indexed(exec, &jobs, |_, &(eta, lambda, seed)| {
        let mut cfg = base.clone();
        cfg.opt.eta = eta;
        cfg.opt.lambda = lambda;
        train_small_net(&cfg, seed).map(|r| SweepCell::from_record(rule, eta, lambda, &r))
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    log::info!("{} sweep: {} cells trained", rule, cells.len());
    Ok(SweepTable::new(cells))
}

/// Learning rate with the lowest seed-averaged validation error at `lambda`.
/// A learning rate counts as diverged if any of its seeds did; ties go to
/// the smaller learning rate.
pub fn select_optimal_lr(table: &SweepTable, lambda: f64) -> Result<(f64, f64)> {
    table.single_optimizer()?;
    if !table.lambdas().iter().any(|&l| same(l, lambda)) {
        return Err(contract(format!("lambda {lambda} is not in the table")));
    }
    let mut best: Option<(f64, f64)> = None;
    for eta in table.etas() {
        let Some(err) = table.point_mean(eta, lambda, |c| c.val_error) else { continue };
        // etas ascend, so only a strictly better error replaces the incumbent
        if best.is_none_or(|(_, e)| err < e - 1e-12) {
            best = Some((eta, err));
        }
    }
    best.ok_or(Error::AllDiverged { lambda })
}

/// Per-lambda optimal learning rates, skipping lambdas where every cell
/// diverged.
pub fn optimal_lr_curve(table: &SweepTable) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for lambda in table.lambdas() {
        match select_optimal_lr(table, lambda) {
            Ok((eta, _)) => out.push((lambda, eta)),
            Err(Error::AllDiverged { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Log-log slope of the optimal learning rate against lambda.
pub fn fit_optimal_lr_exponent(table: &SweepTable) -> Result<LogLogFit> {
    let curve = optimal_lr_curve(table)?;
    if curve.len() < 4 {
        return Err(Error::DegenerateFit(format!(
            "need at least 4 lambdas with an optimal learning rate, got {}",
            curve.len()
        )));
    }
    fit_loglog_slope(&curve)
}

/// Log-log slope of the seed-averaged final norm against `eta / lambda` over
/// all non-diverged points with `lambda > 0`.
pub fn fit_norm_exponent(table: &SweepTable) -> Result<LogLogFit> {
    table.single_optimizer()?;
    let mut pts = Vec::new();
    for lambda in table.lambdas().into_iter().filter(|&l| l > 0.0) {
        for eta in table.etas().into_iter().filter(|&e| e > 0.0) {
            if let Some(n) = table.point_mean(eta, lambda, |c| c.final_norm) {
                pts.push((eta / lambda, n));
            }
        }
    }
    fit_loglog_slope(&pts)
}

/// How much the test error moves along the lambda axis: for every learning
/// rate the range (max - min) of the seed-averaged test error over lambda,
/// averaged over learning rates. With `exclude_top_decade`, lambdas above a
/// tenth of the largest one are left out. Points with a diverged seed are
/// skipped.
pub fn lambda_spread(table: &SweepTable, exclude_top_decade: bool) -> Result<f64> {
    table.single_optimizer()?;
    let mut lambdas = table.lambdas();
    if exclude_top_decade {
        let cut = lambdas.last().copied().unwrap_or(0.0) / 10.0;
        lambdas.retain(|&l| l <= cut * (1.0 + 1e-9));
    }
    let mut ranges = Vec::new();
    for eta in table.etas() {
        let errs: Vec<f64> = lambdas
            .iter()
            .filter_map(|&l| table.point_mean(eta, l, |c| c.test_error))
            .collect();
        if errs.len() >= 2 {
            let max = errs.iter().copied().fold(f64::MIN, f64::max);
            let min = errs.iter().copied().fold(f64::MAX, f64::min);
            ranges.push(max - min);
        }
    }
    if ranges.is_empty() {
        return Err(Error::DegenerateFit("no learning rate has two usable lambdas".into()));
    }
    Ok(ranges.iter().sum::<f64>() / ranges.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(rule: Rule, etas: &[f64], lambdas: &[f64], val: impl Fn(f64, f64) -> f64) -> SweepTable {
        let mut cells = Vec::new();
        for &lambda in lambdas {
            for &eta in etas {
                cells.push(SweepCell {
                    optimizer: rule,
                    eta,
                    lambda,
                    seed: 0,
                    final_norm: (eta / lambda).powf(0.25),
                    train_loss: 0.1,
                    val_error: val(eta, lambda),
                    test_error: val(eta, lambda),
                    diverged: false,
                });
            }
        }
        SweepTable::new(cells)
    }

    #[test]
    fn log_space_endpoints() {
        let v = log_space(1e-4, 1e1, 7);
        assert_eq!(v.len(), 7);
        assert!((v[0] - 1e-4).abs() < 1e-18 && (v[6] - 10.0).abs() < 1e-12);
        assert_eq!(log_space(3.0, 9.0, 1), vec![3.0]);
    }

    #[test]
    fn unique_minimum_is_selected() {
        let etas = log_space(1e-3, 1e1, 9);
        let t = synthetic(Rule::Sgd, &etas, &[0.01], |e, _| (e.log10() - etas[3].log10()).abs());
        let (eta, err) = select_optimal_lr(&t, 0.01).unwrap();
        assert_eq!(eta, etas[3]);
        assert!(err < 1e-12);
    }

    #[test]
    fn ties_go_to_smaller_eta_and_divergence_is_skipped() {
        let mut t = synthetic(Rule::Sgd, &[0.1, 1.0, 10.0], &[0.01], |_, _| 0.2);
        assert_eq!(select_optimal_lr(&t, 0.01).unwrap().0, 0.1);
        for c in t.cells.iter_mut().filter(|c| c.eta < 5.0) {
            c.diverged = true;
        }
        assert_eq!(select_optimal_lr(&t, 0.01).unwrap().0, 10.0);
        t.cells.iter_mut().for_each(|c| c.diverged = true);
        assert!(matches!(select_optimal_lr(&t, 0.01), Err(Error::AllDiverged { .. })));
        assert!(select_optimal_lr(&t, 0.5).is_err());
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let etas = log_space(1e-4, 1e4, 33);
        let lambdas = log_space(1e-3, 1e1, 5);
        for (p, slope) in [(1.0, -1.0), (0.5, -0.5)] {
            let t = synthetic(Rule::Sgd, &etas, &lambdas, |e, l| (e.log10() + p * l.log10()).abs());
            let fit = fit_optimal_lr_exponent(&t).unwrap();
            assert!((fit.slope - slope).abs() < 1e-9, "{}", fit.slope);
            assert!(fit.rms_residual < 1e-9);
        }
        let t = synthetic(Rule::Sgd, &etas, &lambdas[..3], |e, _| e);
        assert!(matches!(fit_optimal_lr_exponent(&t), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn norm_exponent_of_synthetic_table() {
        let t = synthetic(Rule::Sgd, &log_space(1e-3, 1.0, 4), &log_space(1e-3, 1.0, 4), |_, _| 0.1);
        assert!((fit_norm_exponent(&t).unwrap().slope - 0.25).abs() < 1e-12);
    }

    #[test]
    fn spread_ignores_lambda_when_errors_do() {
        let lambdas = log_space(1e-4, 1.0, 5);
        let flat = synthetic(Rule::Sgd, &[0.1, 1.0], &lambdas, |e, _| e * 0.1);
        assert_eq!(lambda_spread(&flat, true).unwrap(), 0.0);
        // only the excluded top lambda differs
        let top = synthetic(Rule::Sgd, &[0.1, 1.0], &lambdas, |_, l| if l > 0.5 { 0.5 } else { 0.1 });
        assert_eq!(lambda_spread(&top, true).unwrap(), 0.0);
        assert!((lambda_spread(&top, false).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn mixed_tables_are_rejected() {
        let mut cells = synthetic(Rule::Sgd, &[0.1], &[0.1], |_, _| 0.1).cells;
        cells.extend(synthetic(Rule::Adam, &[0.1], &[0.1], |_, _| 0.1).cells);
        let t = SweepTable::new(cells);
        assert_eq!(t.optimizers(), vec![Rule::Adam, Rule::Sgd]);
        assert!(select_optimal_lr(&t, 0.1).is_err());
        assert!(select_optimal_lr(&t.for_optimizer(Rule::Adam), 0.1).is_ok());
    }
}
