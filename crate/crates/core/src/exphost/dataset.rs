use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{contract, Result};
use crate::rng::{gaussian_vector, stream_rng};

/// Two-class Gaussian mixture. Class `c` has `clusters` unit-variance
/// components centred at `separation * ((c - 1/2) e_1 + cluster_spread * r)`,
/// where each `r` is a fixed random offset orthogonal to `e_1`. With
/// `separation = 0` the classes coincide; as it grows the first coordinate
/// alone separates them. Each label is then flipped with probability
/// `label_noise`, which raises the Bayes error by that amount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub separation: f64,
    pub clusters: usize,
    pub cluster_spread: f64,
    pub label_noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dim: 10,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            separation: 1.0,
            clusters: 8,
            cluster_spread: 1.5,
            label_noise: 0.0,
        }
    }
}

/// Samples with labels in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn make_dataset(spec: &DatasetSpec, seed: u64) -> Result<Splits> {
    if spec.dim < 2 || spec.clusters == 0 {
        return Err(contract("dataset needs dim >= 2 and at least one cluster"));
    }
    if spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0 {
        return Err(contract("every split needs at least one sample"));
    }
    if !(spec.separation >= 0.0) || !(spec.cluster_spread >= 0.0) {
        return Err(contract("separation and spread must be non-negative"));
    }
    if !(0.0..=0.5).contains(&spec.label_noise) {
        return Err(contract("label_noise must lie in [0, 0.5]"));
    }
    let mut rng = stream_rng(seed, 0);
    let centers: Vec<Vec<DVector<f64>>> = (0..2)
        .map(|c| {
            (0..spec.clusters)
                .map(|_| {
                    let mut r = gaussian_vector(&mut rng, spec.dim, spec.cluster_spread);
                    r[0] = c as f64 - 0.5;
                    r * spec.separation
                })
                .collect()
        })
        .collect();
    let draw = |n: usize, stream: u64| {
        let mut rng = stream_rng(seed, stream);
        let mut x = DMatrix::zeros(n, spec.dim);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = rng.random_range(0..2usize);
            let k = rng.random_range(0..spec.clusters);
            let sample = gaussian_vector(&mut rng, spec.dim, 1.0) + &centers[c][k];
            x.set_row(i, &sample.transpose());
            let flip = rng.random::<f64>() < spec.label_noise;
            y.push(if flip { 1.0 - c as f64 } else { c as f64 });
        }
        Dataset { x, y }
    };
    Ok(Splits {
        train: draw(spec.n_train, 1),
        val: draw(spec.n_val, 2),
        test: draw(spec.n_test, 3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let spec = DatasetSpec { n_train: 50, n_val: 20, n_test: 20, ..Default::default() };
        assert_eq!(make_dataset(&spec, 3).unwrap(), make_dataset(&spec, 3).unwrap());
        assert_ne!(make_dataset(&spec, 3).unwrap(), make_dataset(&spec, 4).unwrap());
    }

    #[test]
    fn splits_have_requested_sizes() {
        let spec = DatasetSpec { n_train: 64, n_val: 16, n_test: 8, ..Default::default() };
        let s = make_dataset(&spec, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 16, 8));
        assert_eq!(s.train.x.ncols(), 10);
        assert!(s.train.y.iter().all(|&y| y == 0.0 || y == 1.0));
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = DatasetSpec { dim: 1, ..Default::default() };
        assert!(make_dataset(&bad, 0).is_err());
        let bad = DatasetSpec { separation: -1.0, ..Default::default() };
        assert!(make_dataset(&bad, 0).is_err());
    }
}
