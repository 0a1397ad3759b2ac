//! Deterministic random streams.
//!
//! Every independent work unit (a Monte-Carlo seed, a sweep cell) draws from
//! its own ChaCha stream keyed by `(master seed, index)`, so results do not
//! depend on execution order.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(master: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// A 64-bit seed for work unit `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    stream_rng(master, index).next_u64()
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Uniformly random direction scaled to `norm`.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, len: usize, norm: f64) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, len, 1.0);
        let n = v.norm();
        if n > 1e-12 {
            return v * (norm / n);
        }
    }
}
