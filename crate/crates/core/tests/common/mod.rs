//! Reference implementations used as test oracles. Written independently of
//! the library code paths they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use mupfl::acmu::DeltaVector;
use mupfl::nn::{softmax, Architecture, ModelParams};
use mupfl::rng::{rng_from_seed, Rng};
use mupfl::Tensor;
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng_from_seed(seed)
}

pub fn uniform(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / (|a| + |b|)` on whole vectors; 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb < 1e-14 {
        0.0
    } else {
        diff / (na + nb)
    }
}

/// Row-major `x (B x in) * w^T (in x out) + b` by triple loop.
pub fn naive_dense(x: &[f64], w: &[f64], bias: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * out);
    for r in 0..batch {
        for o in 0..out {
            let mut acc = bias[o];
            for i in 0..inp {
                acc += x[r * inp + i] * w[o * inp + i];
            }
            y.push(acc);
        }
    }
    y
}

/// Direct 2-D cross-correlation, valid padding, stride 1.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
    k: usize,
) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, wd - k + 1);
    let mut y = vec![0.0; batch * cout * oh * ow];
    for b in 0..batch {
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for di in 0..k {
                            for dj in 0..k {
                                let xv = x[((b * cin + ci) * h + i + di) * wd + j + dj];
                                let wv = w[((co * cin + ci) * k + di) * k + dj];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[((b * cout + co) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    y
}

/// Mean silhouette straight from the definitions: per point, mean distance
/// to its own cluster `a`, smallest mean distance to another cluster `b`,
/// score `(b - a) / max(a, b)`, singletons score 0.
pub fn brute_silhouette(labels: &[usize], dist: &[f64]) -> f64 {
    let n = labels.len();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let d = |i: usize, j: usize| dist[i * n + j];
    let mut total = 0.0;
    for i in 0..n {
        let own = &members[&labels[i]];
        if own.len() == 1 {
            continue;
        }
        let a = own.iter().filter(|&&j| j != i).map(|&j| d(i, j)).sum::<f64>() / (own.len() - 1) as f64;
        let b = members
            .iter()
            .filter(|(&l, _)| l != labels[i])
            .map(|(_, m)| m.iter().map(|&j| d(i, j)).sum::<f64>() / m.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Activation map after feeding `reduced[0..]` with losses `losses[0..]`:
/// `M = r_0 + sum_{l >= 1} (loss_l - loss_{l-1}) r_l`, written out term by term.
pub fn unrolled_map(reduced: &[Vec<f64>], losses: &[f64]) -> Vec<f64> {
    let mut m = reduced[0].clone();
    for l in 1..reduced.len() {
        let psi = losses[l] - losses[l - 1];
        for (mv, rv) in m.iter_mut().zip(&reduced[l]) {
            *mv += psi * rv;
        }
    }
    m
}

/// Clients drawn around `groups` mutually orthogonal directions (disjoint
/// coordinate blocks) with small jitter; returns the vectors and the planted
/// group of each client.
pub fn planted_deltas(n: usize, groups: usize, dim: usize, jitter: f64, rng: &mut Rng) -> (Vec<DeltaVector>, Vec<usize>) {
    let block = dim / groups;
    let mut truth: Vec<usize> = (0..n).map(|i| i % groups).collect();
    // shuffle group order so labels are not trivially sorted
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        truth.swap(i, j);
    }
    let vectors = truth
        .iter()
        .enumerate()
        .map(|(id, &g)| {
            let values: Vec<f64> = (0..dim)
                .map(|c| {
                    let base = if c / block == g { 1.0 } else { 0.0 };
                    base + jitter * rng.random_range(-1.0..1.0)
                })
                .collect();
            DeltaVector {
                client_id: id,
                map_values: values.clone(),
                values,
            }
        })
        .collect();
    (vectors, truth)
}

/// True when two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

pub fn random_model(arch: Architecture, seed: u64) -> ModelParams {
    ModelParams::init(arch, &mut rng(seed))
}

pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

/// Class gradient of a linear classifier for explicit features, computed by
/// hand: `mean_j (r_j h_j^T, r_j)` with `r = softmax(W h + b) - e_k`.
pub fn manual_class_gradient(w: &Tensor, b: &Tensor, feats: &[Vec<f64>], k: usize) -> Vec<f64> {
    let (kk, f) = (w.shape()[0], w.shape()[1]);
    let mut gw = vec![0.0; kk * f];
    let mut gb = vec![0.0; kk];
    for h in feats {
        let logits: Vec<f64> = (0..kk)
            .map(|o| b.data()[o] + (0..f).map(|i| w.data()[o * f + i] * h[i]).sum::<f64>())
            .collect();
        let mut r = softmax(&tensor(&[1, kk], logits)).into_data();
        r[k] -= 1.0;
        for o in 0..kk {
            for i in 0..f {
                gw[o * f + i] += r[o] * h[i] / feats.len() as f64;
            }
            gb[o] += r[o] / feats.len() as f64;
        }
    }
    gw.extend(gb);
    gw
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Linear classifier plus one class gradient per class, each generated from
/// a single random feature.
pub fn planted_gradients(k: usize, f: usize, seed: u64) -> (Vec<Tensor>, BTreeMap<usize, Vec<f64>>) {
    let mut g = rng(seed);
    let w = tensor(&[k, f], uniform(&mut g, k * f, 1.0));
    let b = tensor(&[k], uniform(&mut g, k, 0.5));
    let z = (0..k)
        .map(|c| (c, manual_class_gradient(&w, &b, &[uniform(&mut g, f, 1.0)], c)))
        .collect();
    (vec![w, b], z)
}
