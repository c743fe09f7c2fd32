use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

const RADIUS: f64 = 2.0;

/// Fixed class centre: `±RADIUS * e_(k mod dim)`, growing outward once all
/// signed axes are used so that every class gets a distinct mean.
pub fn synthetic_mean(class: usize, dim: usize) -> Vec<f64> {
    let axis = class % dim;
    let lap = class / dim;
    let sign = if lap.is_multiple_of(2) { 1.0 } else { -1.0 };
    let r = RADIUS * (1 + lap / 2) as f64;
    let mut m = vec![0.0; dim];
    m[axis] = sign * r;
    m
}

/// Gaussian blobs, class-major order, `n_per_class` samples per class.
pub fn make_synthetic(classes: usize, dim: usize, n_per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    make_synthetic_split(classes, dim, &vec![n_per_class; classes], spread, seed)
}

/// Like [`make_synthetic`] with a per-class sample count.
pub fn make_synthetic_split(classes: usize, dim: usize, counts: &[usize], spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dim == 0 || counts.len() != classes {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs >= 2 classes, dim >= 1 and one count per class (got K={classes}, dim={dim})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let total: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for (k, &n) in counts.iter().enumerate() {
        let mean = synthetic_mean(k, dim);
        for _ in 0..n {
            for &m in &mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spread * z);
            }
            labels.push(k);
        }
    }
    Dataset::new(Tensor::new(vec![total, dim], data)?, labels, classes)
}
