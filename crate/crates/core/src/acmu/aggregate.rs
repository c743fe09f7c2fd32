use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// For client `i` in cluster `C`: `w_prev[i] + mean_{j in C} delta[j]`.
/// Sums run in client order so results do not depend on scheduling.
pub fn cluster_aggregate(w_prev: &[ModelParams], deltas: &[Vec<f64>], labels: &[usize]) -> Result<Vec<ModelParams>> {
    let n = labels.len();
    if w_prev.len() != n || deltas.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} broadcasts, {} deltas, {} labels",
            w_prev.len(),
            deltas.len(),
            n
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let dim = deltas[0].len();
    if let Some(d) = deltas.iter().find(|d| d.len() != dim) {
        return Err(Error::shape(&[dim], &[d.len()]));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (d, &l) in deltas.iter().zip(labels) {
        sizes[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(d) {
            *s += v;
        }
    }
    w_prev
        .iter()
        .zip(labels)
        .map(|(w, &l)| {
            let base = w.flatten();
            if base.len() != dim {
                return Err(Error::shape(&[dim], &[base.len()]));
            }
            let size = sizes[l] as f64;
            let flat: Vec<f64> = base.iter().zip(&sums[l]).map(|(b, s)| b + s / size).collect();
            ModelParams::from_flat(w.arch, &flat)
        })
        .collect()
}

/// `n_i / n` for each client; errors on zero sizes.
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("aggregation sizes must be positive: {sizes:?}")));
    }
    let total: usize = sizes.iter().sum();
    let w: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();
    let sum: f64 = w.iter().sum();
    debug_assert!((sum - 1.0).abs() < 1e-12, "weights sum to {sum}");
    Ok(w)
}

/// Size-weighted average `sum_i (n_i / n) * w_i`.
pub fn global_aggregate(models: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    if models.len() != sizes.len() || models.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    let weights = aggregation_weights(sizes)?;
    let arch = models[0].arch;
    let mut acc = vec![0.0; models[0].num_params()];
    for (m, &wt) in models.iter().zip(&weights) {
        m.check_congruent(&models[0])?;
        for (a, v) in acc.iter_mut().zip(m.flatten()) {
            *a += wt * v;
        }
    }
    ModelParams::from_flat(arch, &acc)
}
