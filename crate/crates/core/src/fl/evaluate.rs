use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, forward, ModelParams};

/// Top-1 accuracy, overall and per class. Classes absent from the test set
/// have `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Accuracy {
    pub overall: f64,
    pub per_class: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
}

impl Accuracy {
    /// Unweighted mean accuracy over the listed classes that have test samples.
    pub fn mean_over(&self, classes: &[usize]) -> f64 {
        let vals: Vec<f64> = classes.iter().filter_map(|&k| self.per_class.get(k).copied().flatten()).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

const EVAL_CHUNK: usize = 512;

pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let k = test.classes();
    let mut correct = vec![0usize; k];
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = forward(params, &test.samples().select_rows(chunk))?.logits;
        for (&i, pred) in chunk.iter().zip(argmax_rows(&logits)) {
            if test.labels()[i] == pred {
                correct[pred] += 1;
            }
        }
    }
    let counts = test.class_counts();
    Ok(Accuracy {
        overall: correct.iter().sum::<usize>() as f64 / test.len() as f64,
        per_class: correct
            .iter()
            .zip(&counts)
            .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
            .collect(),
        class_counts: counts,
    })
}

/// The rarest `ceil(fraction * K)` classes (at least one). Classes are ranked
/// head to tail by index.
pub fn tail_classes(classes: usize, fraction: f64) -> Vec<usize> {
    let n = ((fraction * classes as f64 - 1e-9).ceil() as usize).clamp(1, classes);
    (classes - n..classes).collect()
}
