use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_logits(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if logits.shape().len() != 2 {
        return Err(Error::shape(&[labels.len(), 0], logits.shape()));
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if b != labels.len() {
        return Err(Error::shape(&[labels.len(), k], logits.shape()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok((b, k))
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise softmax of a `B x K` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.data().chunks(k.max(1)).zip(out.chunks_mut(k.max(1))) {
        softmax_row(row, o);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = check_logits(logits, labels)?;
    if b == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / b as f64)
}

/// Loss and its gradient with respect to the logits, `(softmax - onehot) / B`.
pub fn cross_entropy_with_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let loss = cross_entropy(logits, labels)?;
    let (b, k) = (labels.len(), logits.row_len());
    let mut grad = softmax(logits).into_data();
    let scale = 1.0 / b.max(1) as f64;
    for (row, &y) in grad.chunks_mut(k.max(1)).zip(labels) {
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= scale);
    }
    Ok((loss, grad))
}
