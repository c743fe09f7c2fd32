//! Adaptive cluster-based model update.
//!
//! Clients are embedded by their rows of the composite similarity matrix,
//! clustered with k-means for every candidate cluster count, and the count
//! with the highest silhouette (on `1 - similarity`) wins. Deltas are then
//! averaged inside each cluster before the size-weighted global average.

mod aggregate;
mod kmeans;
mod silhouette;
mod similarity;

pub use aggregate::{aggregation_weights, cluster_aggregate, global_aggregate};
pub use kmeans::{canonical_labels, kmeans};
pub use silhouette::silhouette;
pub use similarity::{cosine, delta_weights, pairwise_similarity, DeltaVector, SimilarityMatrix};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// k-means initialisations tried per candidate cluster count.
pub const KMEANS_RESTARTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub kappa: usize,
    pub labels: Vec<usize>,
    pub silhouette: f64,
    /// `(kappa, score)` for every candidate that was evaluated.
    pub scores: Vec<(usize, f64)>,
}

impl ClusterAssignment {
    /// Everyone in cluster 0. Used below three participants and when
    /// clustering is forced off.
    pub fn single(n: usize) -> Self {
        Self {
            kappa: 1,
            labels: vec![0; n],
            silhouette: 0.0,
            scores: Vec::new(),
        }
    }

    /// Each client alone in its own cluster.
    pub fn singletons(n: usize) -> Self {
        Self {
            kappa: n,
            labels: (0..n).collect(),
            silhouette: 0.0,
            scores: Vec::new(),
        }
    }
}

/// Picks the cluster count in `[kappa_min, kappa_max]` with the largest mean
/// silhouette; ties go to the smaller count. Fewer than three clients
/// collapse to a single cluster scored 0.
pub fn select_clusters(sim: &SimilarityMatrix, kappa_min: usize, kappa_max: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = sim.n();
    if n < 3 {
        return Ok(ClusterAssignment::single(n));
    }
    if kappa_min < 2 || kappa_min > kappa_max || kappa_max > n - 1 {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= kappa_min <= kappa_max <= n - 1, got [{kappa_min}, {kappa_max}] for n = {n}"
        )));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| sim.row(i).to_vec()).collect();
    let dist = sim.distances();
    let mut best: Option<(usize, Vec<usize>, f64)> = None;
    let mut scores = Vec::new();
    for kappa in kappa_min..=kappa_max {
        let mut rng = stream_rng(seed, Stream::Clustering, &[kappa as u64]);
        let labels = kmeans(&points, kappa, KMEANS_RESTARTS, &mut rng);
        let s = silhouette(&labels, &dist)?;
        scores.push((kappa, s));
        if best.as_ref().is_none_or(|b| s > b.2) {
            best = Some((kappa, labels, s));
        }
    }
    let (kappa, labels, silhouette) = best.expect("non-empty range");
    Ok(ClusterAssignment {
        kappa,
        labels,
        silhouette,
        scores,
    })
}
