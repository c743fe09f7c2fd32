//! Datasets, partitioning and loaders.

mod idx;
mod partition;
mod synthetic;

pub use idx::{load_idx, parse_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{apply_long_tail, apply_long_tail_with_head, dirichlet_partition, long_tail_profile, PartitionSpec};
pub use synthetic::{make_synthetic, make_synthetic_split, synthetic_mean};

use crate::blob::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"MPFD";

/// Labelled samples. `samples` is `N x <sample shape>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.shape().is_empty() || samples.rows() != labels.len() {
            return Err(Error::shape(&[labels.len()], samples.shape()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            samples,
            labels,
            classes,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Sample indices grouped by class, ascending within each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Reinterprets each sample with a new per-sample shape of equal size.
    pub fn reshape_samples(self, sample_shape: &[usize]) -> Result<Dataset> {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(sample_shape);
        Ok(Dataset {
            samples: self.samples.reshape(shape)?,
            ..self
        })
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(DATASET_MAGIC);
        w.u32(self.classes as u32);
        w.u64(self.labels.len() as u64);
        for &l in &self.labels {
            w.u32(l as u32);
        }
        w.tensor(&self.samples);
        w.finish()
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Dataset> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(DATASET_MAGIC)?;
        let classes = r.u32()? as usize;
        let n = r.usize()?;
        if n.saturating_mul(4) > bytes.len() {
            return Err(Error::Truncated {
                needed: n.saturating_mul(4),
                available: bytes.len(),
            });
        }
        let labels = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let samples = r.tensor()?;
        r.finish()?;
        Dataset::new(samples, labels, classes)
    }
}
