use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// A client's round update as seen by the interface: flattened weight delta
/// plus flattened activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVector {
    pub client_id: usize,
    pub values: Vec<f64>,
    pub map_values: Vec<f64>,
}

/// `flatten(w_t) - flatten(w_prev)`.
pub fn delta_weights(w_t: &ModelParams, w_prev: &ModelParams) -> Result<Vec<f64>> {
    w_t.check_congruent(w_prev)?;
    Ok(w_t.flatten().iter().zip(w_prev.flatten()).map(|(a, b)| a - b).collect())
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Composite client similarity `mix * cos(dw) + (1 - mix) * cos(map)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<f64>,
    sim_mix: f64,
    /// Clients whose delta or map had zero norm; their cosine terms were
    /// taken as 0.
    pub zero_norm_clients: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn from_entries(n: usize, entries: Vec<f64>, sim_mix: f64) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::shape(&[n, n], &[entries.len()]));
        }
        Ok(Self {
            n,
            entries,
            sim_mix,
            zero_norm_clients: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sim_mix(&self) -> f64 {
        self.sim_mix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// `1 - similarity`, the dissimilarity used for silhouette scoring.
    pub fn distances(&self) -> Vec<f64> {
        self.entries.iter().map(|s| 1.0 - s).collect()
    }
}

pub fn pairwise_similarity(deltas: &[DeltaVector], sim_mix: f64) -> Result<SimilarityMatrix> {
    let n = deltas.len();
    if n < 2 {
        return Err(Error::InvalidArgument("similarity needs at least two clients".into()));
    }
    if !(0.0..=1.0).contains(&sim_mix) {
        return Err(Error::InvalidArgument(format!("sim_mix must lie in [0, 1], got {sim_mix}")));
    }
    let (dlen, mlen) = (deltas[0].values.len(), deltas[0].map_values.len());
    for d in deltas {
        if d.values.len() != dlen || d.map_values.len() != mlen {
            return Err(Error::shape(&[dlen, mlen], &[d.values.len(), d.map_values.len()]));
        }
    }
    let zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
    let zero_norm_clients: Vec<usize> = deltas
        .iter()
        .filter(|d| zero(&d.values) || zero(&d.map_values))
        .map(|d| d.client_id)
        .collect();
    if !zero_norm_clients.is_empty() {
        log::warn!("zero-norm delta or activation map for clients {zero_norm_clients:?}; cosine taken as 0");
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in i + 1..n {
            let cw = cosine(&deltas[i].values, &deltas[j].values).unwrap_or(0.0);
            let cm = cosine(&deltas[i].map_values, &deltas[j].map_values).unwrap_or(0.0);
            let s = sim_mix * cw + (1.0 - sim_mix) * cm;
            entries[i * n + j] = s;
            entries[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix {
        n,
        entries,
        sim_mix,
        zero_norm_clients,
    })
}
