//! Biased activation value dropout.
//!
//! Each client keeps an `H x W` activation map. The first batch of a round
//! seeds it with the batch/channel mean of the hidden activation; every later
//! batch adds that mean weighted by the loss change `psi`. The min-max
//! normalised map, thresholded at its own mean, decides which spatial
//! positions survive the forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SpatialMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SignConvention {
    /// `psi = loss_now - loss_prev`
    #[default]
    AsWritten,
    /// `psi = loss_prev - loss_now`, so falling loss gives positive weight.
    Negated,
}

impl SignConvention {
    pub fn apply(self, psi: f64) -> f64 {
        match self {
            SignConvention::AsWritten => psi,
            SignConvention::Negated => -psi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    MeanThreshold,
    /// Keep the `k` highest-scoring positions.
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BavdConfig {
    pub enabled: bool,
    pub sign_convention: SignConvention,
    pub mode: MaskMode,
    /// Restart the map (iteration 0) whenever fresh global weights arrive.
    pub reset_each_round: bool,
}

impl Default for BavdConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sign_convention: SignConvention::AsWritten,
            mode: MaskMode::MeanThreshold,
            reset_each_round: true,
        }
    }
}

pub fn psi_coefficient(loss_curr: f64, loss_prev: f64) -> f64 {
    loss_curr - loss_prev
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    map: Tensor,
    last_loss: Option<f64>,
    iteration: usize,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            map: Tensor::zeros(vec![height, width]),
            last_loss: None,
            iteration: 0,
        }
    }

    pub fn from_parts(map: Tensor, last_loss: Option<f64>, iteration: usize) -> Result<Self> {
        if map.shape().len() != 2 || !map.is_finite() {
            return Err(Error::Malformed("activation map must be a finite H x W tensor".into()));
        }
        Ok(Self {
            map,
            last_loss,
            iteration,
        })
    }

    pub fn map(&self) -> &Tensor {
        &self.map
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.map.shape()[0], self.map.shape()[1])
    }

    pub fn reset(&mut self) {
        self.map.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.last_loss = None;
        self.iteration = 0;
    }

    /// One recurrence step. At iteration 0 the map is overwritten with the
    /// reduced activation and `psi` is ignored.
    pub fn update(&mut self, h: &Tensor, psi: f64) -> Result<()> {
        let reduced = reduce_batch_channel(h, self.shape())?;
        if self.iteration == 0 {
            self.map.data_mut().copy_from_slice(&reduced);
        } else {
            for (m, r) in self.map.data_mut().iter_mut().zip(&reduced) {
                *m += psi * r;
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Updates from a batch's activation and loss, deriving `psi` from the
    /// previously observed loss.
    pub fn observe(&mut self, h: &Tensor, loss: f64, convention: SignConvention) -> Result<()> {
        let psi = match self.last_loss {
            Some(prev) if self.iteration > 0 => convention.apply(psi_coefficient(loss, prev)),
            _ => 0.0,
        };
        self.update(h, psi)?;
        self.last_loss = Some(loss);
        Ok(())
    }

    /// Keep-mask for the next forward pass, or `None` while the map is empty.
    pub fn mask(&self, mode: MaskMode) -> Option<SpatialMask> {
        if self.iteration == 0 {
            return None;
        }
        let (norm, mu) = normalize_map(self);
        Some(match mode {
            MaskMode::MeanThreshold => threshold_mask(&norm, mu),
            MaskMode::TopK(k) => top_k_mask(&norm, k),
        })
    }
}

/// Functional form of [`ActivationMap::update`].
pub fn update_activation_map(m: &ActivationMap, h: &Tensor, psi: f64) -> Result<ActivationMap> {
    let mut next = m.clone();
    next.update(h, psi)?;
    Ok(next)
}

/// Mean over batch and channel of a `B x C x H x W` activation.
fn reduce_batch_channel(h: &Tensor, (mh, mw): (usize, usize)) -> Result<Vec<f64>> {
    let s = h.shape();
    if s.len() != 4 || s[2] != mh || s[3] != mw {
        return Err(Error::shape(&[s.first().copied().unwrap_or(0), 0, mh, mw], s));
    }
    let planes = s[0] * s[1];
    let mut out = vec![0.0; mh * mw];
    if planes == 0 {
        return Ok(out);
    }
    for plane in h.data().chunks(mh * mw) {
        for (o, v) in out.iter_mut().zip(plane) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= planes as f64);
    Ok(out)
}

/// Min-max normalisation to `[0, 1]` and the mean of the result. A constant
/// map normalises to 0.5 everywhere.
pub fn normalize_map(m: &ActivationMap) -> (Tensor, f64) {
    let d = m.map.data();
    let (lo, hi) = d
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let norm: Vec<f64> = if d.is_empty() || hi <= lo {
        vec![0.5; d.len()]
    } else {
        d.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    let mu = if norm.is_empty() {
        0.5
    } else {
        norm.iter().sum::<f64>() / norm.len() as f64
    };
    (Tensor::new(m.map.shape().to_vec(), norm).expect("same shape"), mu)
}

fn map_dims(map_norm: &Tensor) -> (usize, usize) {
    match map_norm.shape() {
        [h, w] => (*h, *w),
        _ => (1, map_norm.len()),
    }
}

pub fn threshold_mask(map_norm: &Tensor, mu: f64) -> SpatialMask {
    let (height, width) = map_dims(map_norm);
    SpatialMask {
        height,
        width,
        keep: map_norm.data().iter().map(|&v| v >= mu).collect(),
    }
}

/// Keeps the `k` largest entries; ties go to the lower index.
pub fn top_k_mask(map_norm: &Tensor, k: usize) -> SpatialMask {
    let (height, width) = map_dims(map_norm);
    let d = map_norm.data();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let mut keep = vec![false; d.len()];
    for &i in order.iter().take(k) {
        keep[i] = true;
    }
    SpatialMask { height, width, keep }
}

/// Zeroes `h[b, c, i, j]` wherever `map_norm[i, j] < mu`.
pub fn apply_bavd_mask(h: &Tensor, map_norm: &Tensor, mu: f64) -> Result<Tensor> {
    let (mh, mw) = map_dims(map_norm);
    let s = h.shape();
    if s.len() != 4 || s[2] != mh || s[3] != mw {
        return Err(Error::shape(&[s.first().copied().unwrap_or(0), 0, mh, mw], s));
    }
    let mut out = h.clone();
    threshold_mask(map_norm, mu).apply(out.data_mut());
    Ok(out)
}
