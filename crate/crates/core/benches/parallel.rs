use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use normscale::exphost::{log_space, run_grid_sweep, DatasetSpec, Grid, TrainConfig};
use normscale::optim::{OptConfig, Rule};
use normscale::scalelab::{mean_stationary_norm, ExponentSweep, NoiseModel, NormSimulation};
use normscale::Execution;

const MODES: [(&str, Execution); 2] = [("serial", Execution::Serial), ("parallel", Execution::Parallel)];

fn monte_carlo(c: &mut Criterion) {
    let nm = NoiseModel::new(1.0, 1.0, 64);
    let sim = NormSimulation::new(OptConfig::new(Rule::Sgd, 0.1, 0.01), nm, 5_000);
    let mut g = c.benchmark_group("stationary_norm_16_seeds");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mean_stationary_norm(&sim, 16, 1, exec).unwrap())
        });
    }
    g.finish();

    let sweep = ExponentSweep::eta_over_lambda(Rule::Adam, 1e-4, &log_space(1.0, 1e3, 7), nm, 2_000);
    let mut g = c.benchmark_group("norm_exponent_7x4");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| sweep.run(4, 1, exec).unwrap()));
    }
    g.finish();
}

fn grid_sweep(c: &mut Criterion) {
    let base = TrainConfig {
        epochs: 3,
        data: DatasetSpec { n_train: 512, n_val: 128, n_test: 128, ..Default::default() },
        ..Default::default()
    };
    let grid = Grid { etas: log_space(1e-3, 1.0, 4), lambdas: log_space(1e-4, 1e-1, 4), seeds: 1 };
    let mut g = c.benchmark_group("grid_sweep_4x4");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_grid_sweep(&grid, &base, 1, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo, grid_sweep);
criterion_main!(benches);
