use crate::error::{Error, Result};

/// Mean silhouette over all points for an `n x n` row-major distance matrix.
///
/// Points in singleton clusters score 0, as do points whose intra- and
/// nearest-cluster distances are both 0.
pub fn silhouette(labels: &[usize], dist: &[f64]) -> Result<f64> {
    let n = labels.len();
    if dist.len() != n * n {
        return Err(Error::shape(&[n, n], &[dist.len()]));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("silhouette of an empty set".into()));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, &l) in labels.iter().enumerate() {
            if j != i {
                sums[l] += dist[i * n + j];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
