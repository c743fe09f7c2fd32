use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub n_clients: usize,
    /// Concentration of the symmetric Dirichlet over clients.
    pub dirichlet_alpha: f64,
    /// Ratio of the largest to the smallest class after long-tailing.
    pub imbalance_factor: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::InvalidArgument("n_clients must be >= 1".into()));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            )));
        }
        check_imbalance(self.imbalance_factor)
    }
}

fn check_imbalance(factor: f64) -> Result<()> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("imbalance factor must be >= 1, got {factor}")));
    }
    Ok(())
}

/// Exponential long-tail profile: `n_k = round(n_max * factor^(-k / (K - 1)))`,
/// never below one sample.
pub fn long_tail_profile(n_max: usize, classes: usize, factor: f64) -> Vec<usize> {
    if classes <= 1 {
        return vec![n_max; classes];
    }
    (0..classes)
        .map(|k| {
            let frac = k as f64 / (classes - 1) as f64;
            ((n_max as f64 * factor.powf(-frac)).round() as usize).max(1)
        })
        .collect()
}

/// Subsamples each class to the exponential profile, with class 0 as the head.
/// Retained samples keep their original relative order.
pub fn apply_long_tail(ds: &Dataset, factor: f64, seed: u64) -> Result<Dataset> {
    let n_max = ds.class_counts().into_iter().max().unwrap_or(0);
    apply_long_tail_with_head(ds, n_max, factor, seed)
}

/// [`apply_long_tail`] with an explicit head-class count.
pub fn apply_long_tail_with_head(ds: &Dataset, n_max: usize, factor: f64, seed: u64) -> Result<Dataset> {
    check_imbalance(factor)?;
    let by_class = ds.indices_by_class();
    let targets = long_tail_profile(n_max, ds.classes(), factor);
    let mut keep = Vec::new();
    for (class, (idx, &want)) in by_class.iter().zip(&targets).enumerate() {
        if idx.len() < want {
            return Err(Error::InsufficientSamples {
                class,
                available: idx.len(),
                required: want,
            });
        }
        let mut idx = idx.clone();
        if want < idx.len() {
            idx.shuffle(&mut stream_rng(seed, Stream::LongTail, &[class as u64]));
        }
        keep.extend_from_slice(&idx[..want]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

fn sample_dirichlet(alpha: f64, n: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut p: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|v| *v /= sum);
    } else {
        // every draw underflowed; the limit of a vanishing alpha is a point mass
        let pick = rand::Rng::random_range(rng, 0..n);
        p = (0..n).map(|i| if i == pick { 1.0 } else { 0.0 }).collect();
    }
    p
}

/// Splits every class across clients by proportions drawn from
/// `Dir(alpha * 1_N)`. Partitions are disjoint and cover the input.
pub fn dirichlet_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let n = spec.n_clients;
    let mut rng = stream_rng(spec.seed, Stream::Partition, &[]);
    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); n];
    for mut idx in ds.indices_by_class() {
        idx.shuffle(&mut rng);
        let p = sample_dirichlet(spec.dirichlet_alpha, n, &mut rng);
        let total = idx.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (client, share) in p.iter().enumerate() {
            cum += share;
            let end = if client + 1 == n {
                total
            } else {
                ((cum * total as f64).round() as usize).clamp(start, total)
            };
            owned[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    Ok(owned
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            ds.subset(&idx)
        })
        .collect())
}
