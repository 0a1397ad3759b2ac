#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use normscale::normunits::{Batch, Nonlinearity, UnitParams};
use normscale::objective::{LossSpec, Problem, UnitKind};
use normscale::rng::{gaussian_vector, stream_rng};
use rand::Rng;

pub fn rel_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_gap_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn random_batch(seed: u64, n: usize, d: usize) -> Batch {
    let mut rng = stream_rng(seed, 0);
    Batch::new(DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))).unwrap()
}

pub fn random_params(seed: u64, d: usize) -> UnitParams {
    let mut rng = stream_rng(seed, 1);
    let w = gaussian_vector(&mut rng, d, 1.0);
    UnitParams {
        w,
        gamma: rng.random_range(0.5..2.0),
        beta: rng.random_range(-0.5..0.5),
        bias: rng.random_range(-0.5..0.5),
    }
}

pub fn random_upstream(seed: u64, n: usize) -> DVector<f64> {
    let mut rng = stream_rng(seed, 2);
    gaussian_vector(&mut rng, n, 1.0)
}

pub fn random_problem(
    seed: u64,
    n: usize,
    d: usize,
    kind: UnitKind,
    g: Nonlinearity,
    loss: LossSpec,
    lambda: f64,
) -> Problem {
    let b = random_batch(seed, n, d);
    let mut rng = stream_rng(seed, 3);
    let t = match loss {
        LossSpec::SquaredError => gaussian_vector(&mut rng, n, 1.0),
        LossSpec::Logistic => DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 }),
    };
    let batch = Batch::with_targets(b.x().clone(), t).unwrap();
    Problem::new(batch, kind, g, loss, lambda).unwrap()
}
