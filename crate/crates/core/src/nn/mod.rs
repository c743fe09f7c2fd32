//! Hand-differentiated dense/conv network with an extractor/classifier split.

pub mod layers;
mod loss;
mod model;

pub use loss::{cross_entropy, cross_entropy_with_grad, softmax};
pub use model::{
    backward, backward_masked, classifier_grads, forward, forward_trace, sgd_step, sgd_step_in_place,
    Architecture, Backward, Forward, ForwardTrace, Gradients, ModelParams, SpatialMask, CONV_KERNEL,
};

/// Index of the largest logit per row, ties to the lowest index.
pub fn argmax_rows(logits: &crate::tensor::Tensor) -> Vec<usize> {
    let k = logits.row_len().max(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
