mod checks;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use normscale::exphost::{self, config, Grid, Quantity, SweepTable, TrainConfig};
use normscale::optim::{OptConfig, Rule};
use normscale::scalelab::{equilibrium_norm_closed_form, mean_stationary_norm, NoiseModel, NormSimulation};
use normscale::{Error, Execution};

const SEED_VAR: &str = "NORMSCALE_SEED";
const DEFAULT_SEED: u64 = 42;

/// Weight-scale experiments for normalized units.
#[derive(Debug, Parser)]
#[command(name = "normscale", version)]
struct Cli {
    /// Run work units one at a time instead of on the thread pool.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FitTarget {
    NormExponent,
    LrExponent,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scale invariance of BN/WN outputs and the regularized objective identity.
    CheckInvariance {
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Trajectory equivalence between a scaled run and the rescaled configuration.
    CheckEquivalence {
        #[arg(long)]
        rule: Rule,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Learning rate of the unit-scale run.
        #[arg(long)]
        eta: Option<f64>,
        /// Weight decay of the unit-scale run.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Monte-Carlo stationary weight norm under the gradient-noise model.
    SimulateEquilibrium {
        #[arg(long)]
        rule: Rule,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 50_000)]
        steps: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
    /// Train the small network over the (eta, lambda) grid and write CSV.
    Sweep {
        #[arg(long)]
        optimizer: Option<Rule>,
        #[arg(long)]
        out: PathBuf,
        /// `key = value` file applied before any --set.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one configuration key, e.g. `--set epochs=20`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        etas: Option<Vec<f64>>,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Fit a power law to a sweep CSV.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        what: FitTarget,
    },
    /// Surface data (log10 lambda, log10 eta, value) from a sweep CSV.
    EmitPlot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        quantity: Quantity,
        #[arg(long)]
        optimizer: Option<Rule>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn master_seed() -> Result<u64> {
    match std::env::var(SEED_VAR) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Contract(format!("{SEED_VAR} must be an unsigned integer, got {s:?}")).into()),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn read_table(path: &PathBuf) -> Result<SweepTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(exphost::parse_csv(&text)?)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let exec = if cli.serial { Execution::Serial } else { Execution::Parallel };
    let seed = master_seed()?;
    let mut out = io::stdout().lock();
    match cli.command {
        Command::CheckInvariance { instances } => {
            if instances == 0 {
                return Err(Error::Contract("need at least one instance".into()).into());
            }
            let lines = checks::invariance_suite(instances, seed)?;
            for l in &lines {
                let op = if l.upper { "<=" } else { ">" };
                writeln!(out, "{}: {}  {:.3e} {op} {:.0e}", verdict(l.pass()), l.name, l.value, l.bound)?;
            }
            return Ok(if lines.iter().all(|l| l.pass()) { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::CheckEquivalence { rule, alpha, steps, eta, lambda, tol } => {
            let (cfg, prob, p) = checks::default_setup(rule, eta, lambda, seed)?;
            let r = checks::equivalence(&cfg, &prob, &p, alpha, steps, tol)?;
            writeln!(
                out,
                "{}: {} alpha={} steps={} max relative deviation {:.3e} (tolerance {:.0e}){}",
                verdict(r.pass),
                rule,
                alpha,
                steps,
                r.max_rel_deviation,
                tol,
                r.failed_at.map(|t| format!(", run failed at step {t}")).unwrap_or_default()
            )?;
            return Ok(if r.pass { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::SimulateEquilibrium { rule, eta, lambda, steps, dim, seeds, sigma, gamma } => {
            let noise = NoiseModel::new(sigma, gamma, dim);
            let sim = NormSimulation::new(OptConfig::new(rule, eta, lambda), noise, steps);
            let mc = mean_stationary_norm(&sim, seeds.max(1), seed, exec)?;
            let closed = equilibrium_norm_closed_form(rule, eta, lambda, &noise, None)?;
            writeln!(out, "rule={rule} eta={eta} lambda={lambda} steps={steps} dim={dim} seeds={seeds}")?;
            writeln!(out, "monte_carlo_norm {mc:.6}")?;
            writeln!(out, "closed_form_norm {closed:.6}")?;
            if closed > 0.0 {
                writeln!(out, "relative_gap {:.4}", (mc - closed).abs() / closed)?;
            }
        }
        Command::Sweep { optimizer, out: path, config: file, overrides, seeds, etas, lambdas } => {
            let mut cfg = TrainConfig::default();
            if let Some(file) = &file {
                let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
                config::apply(&mut cfg, &text)?;
            }
            for kv in &overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Contract(format!("--set expects KEY=VALUE, got {kv:?}")))?;
                config::set(&mut cfg, k.trim(), v.trim()).map_err(Error::Contract)?;
            }
            if let Some(rule) = optimizer {
                cfg.opt.rule = rule;
            }
            let mut grid = Grid::default().with_seeds(seeds);
            if let Some(e) = etas {
                grid.etas = e;
            }
            if let Some(l) = lambdas {
                grid.lambdas = l;
            }
            let table = exphost::run_grid_sweep(&grid, &cfg, seed, exec)?;
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            exphost::emit_csv(&table, io::BufWriter::new(file))?;
            let frac = table.diverged_fraction();
            writeln!(out, "{} cells written to {} ({:.0}% diverged)", table.len(), path.display(), 100.0 * frac)?;
            if frac > 0.5 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Fit { input, what } => {
            let table = read_table(&input)?;
            if table.is_empty() {
                return Err(Error::DegenerateFit("the table has no cells".into()).into());
            }
            for rule in table.optimizers() {
                let sub = table.for_optimizer(rule);
                let fit = match what {
                    FitTarget::NormExponent => exphost::fit_norm_exponent(&sub)?,
                    FitTarget::LrExponent => exphost::fit_optimal_lr_exponent(&sub)?,
                };
                writeln!(out, "{rule} slope {:.6} residual {:.6}", fit.slope, fit.rms_residual)?;
            }
        }
        Command::EmitPlot { input, quantity, optimizer, out: dest } => {
            let table = read_table(&input)?;
            let table = match optimizer {
                Some(rule) => table.for_optimizer(rule),
                None => table,
            };
            match dest {
                Some(path) => {
                    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    exphost::emit_plot_data(&table, quantity, io::BufWriter::new(file))?;
                }
                None => exphost::emit_plot_data(&table, quantity, &mut out)?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// 2 for violated preconditions and malformed input, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> ExitCode {
    match err.downcast_ref::<Error>() {
        Some(Error::Contract(_) | Error::Parse { .. } | Error::UnknownRule(_) | Error::IncompleteGrid(_)) => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
