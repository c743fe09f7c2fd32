//! MNIST-style IDX files (big-endian header, u8 payload).

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Truncated {
            needed: at + 4,
            available: buf.len(),
        })
}

fn payload(buf: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    buf.get(header..header + len).ok_or(Error::Truncated {
        needed: header + len,
        available: buf.len(),
    })
}

/// Parses in-memory IDX image and label files. Pixels are scaled to `[0, 1]`
/// and samples shaped `N x 1 x rows x cols`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;

    let magic = be_u32(labels, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n_labels = be_u32(labels, 4)? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let pixels = payload(images, 16, n * rows * cols)?;
    let raw_labels = payload(labels, 8, n)?;
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}
