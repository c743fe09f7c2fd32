//! Prior-knowledge classifier fine-tuning.
//!
//! Clients send class-averaged classifier gradients. The server averages them
//! per class and optimises a bank of synthetic features so that the classifier
//! gradients they induce point the same way (`1 - cos` is minimised). Clients
//! then pre-train their classifier on the bank before local training.
//!
//! The classifier is always a single dense layer `o = W h + b`, so the
//! gradient of the matching loss with respect to a feature has a closed form.
//! For one feature `h` of class `k` with `p = softmax(W h + b)` and
//! `r = p - e_k`, the induced classifier gradient is `(r h^T, r)`. Writing
//! `G = dcos/dz_hat = (G_W, G_b)` and `J = diag(p) - p p^T`,
//!
//! ```text
//! d cos / d h = (1/m) * ( W^T J (G_W h + G_b) + G_W^T r )
//! ```

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::blob::{ByteReader, ByteWriter};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{classifier_grads, forward, softmax, ModelParams};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::Tensor;

pub const GRADIENTS_MAGIC: [u8; 4] = *b"MPFG";
pub const BANK_MAGIC: [u8; 4] = *b"MPFB";

/// Standard deviation of the synthetic feature initialisation.
pub const INIT_STD: f64 = 0.1;

/// Per-class mean classifier gradient `z^k` from one client. This is the
/// entire client-to-server payload of the stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeatureGradients {
    pub client_id: usize,
    pub per_class: BTreeMap<usize, Vec<f64>>,
}

impl ClassFeatureGradients {
    /// `MPFG | client: u64 | count: u32 | classes: count x u32 | tensor [count, dim]`
    pub fn to_blob(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(GRADIENTS_MAGIC);
        w.u64(self.client_id as u64);
        w.u32(self.per_class.len() as u32);
        for &k in self.per_class.keys() {
            w.u32(k as u32);
        }
        let dim = self.per_class.values().next().map_or(0, Vec::len);
        let data: Vec<f64> = self.per_class.values().flatten().copied().collect();
        w.tensor(&Tensor::new(vec![self.per_class.len(), dim], data).expect("uniform lengths"));
        w.finish()
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(GRADIENTS_MAGIC)?;
        let client_id = r.usize()?;
        let count = r.u32()? as usize;
        let classes: Vec<usize> = (0..count).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let t = r.tensor()?;
        r.finish()?;
        if t.shape().len() != 2 || t.rows() != count {
            return Err(Error::Malformed(format!("payload shape {:?} for {count} classes", t.shape())));
        }
        let per_class = classes.into_iter().enumerate().map(|(i, k)| (k, t.row(i).to_vec())).collect();
        Ok(Self { client_id, per_class })
    }
}

/// Up to `cap` samples of every class, uniformly without replacement.
pub fn sample_per_class(ds: &Dataset, cap: usize, rng: &mut Rng) -> Dataset {
    let mut keep = Vec::new();
    for mut idx in ds.indices_by_class() {
        if idx.len() > cap {
            idx.shuffle(rng);
            idx.truncate(cap);
        }
        keep.extend(idx);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// `z^k = mean_{x in class k} grad_v loss(g(f(x; u); v), k)` for each class
/// present in `subset`. Features come from the plain (unmasked) forward pass.
pub fn class_feature_gradients(params: &ModelParams, subset: &Dataset, client_id: usize) -> Result<ClassFeatureGradients> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("PKCF subset is empty".into()));
    }
    let features = forward(params, subset.samples())?.features;
    let mut per_class = BTreeMap::new();
    for (k, idx) in subset.indices_by_class().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let (_, g) = classifier_grads(&params.classifier, &features.select_rows(&idx), &vec![k; idx.len()])?;
        per_class.insert(k, g.iter().flat_map(|t| t.data().iter().copied()).collect());
    }
    Ok(ClassFeatureGradients { client_id, per_class })
}

/// Mean over the clients that reported each class.
pub fn aggregate_class_gradients(all: &[ClassFeatureGradients]) -> Result<BTreeMap<usize, Vec<f64>>> {
    if all.is_empty() {
        return Err(Error::InvalidArgument("no client gradients to aggregate".into()));
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let mut dim = None;
    for report in all {
        for (&k, z) in &report.per_class {
            if *dim.get_or_insert(z.len()) != z.len() {
                return Err(Error::shape(&[dim.unwrap_or(0)], &[z.len()]));
            }
            let entry = sums.entry(k).or_insert_with(|| (vec![0.0; z.len()], 0));
            entry.1 += 1;
            for (s, v) in entry.0.iter_mut().zip(z) {
                *s += v;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, c))| (k, s.into_iter().map(|v| v / c as f64).collect()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    /// Features per class.
    pub m: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Synthetic features, `K x m x F`. Rows of unreported classes stay zero and
/// are excluded from fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeatureBank {
    pub features: Tensor,
    pub reported: Vec<bool>,
    pub round: usize,
    /// Final `1 - cos` per class, `None` where the class was not optimised.
    pub class_distance: Vec<Option<f64>>,
    /// Matching loss before each step plus the final value.
    pub loss_trace: Vec<f64>,
}

impl GlobalFeatureBank {
    pub fn classes(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn per_class(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(0.0)
    }

    pub fn feature(&self, k: usize, j: usize) -> &[f64] {
        let f = self.feature_dim();
        let off = (k * self.per_class() + j) * f;
        &self.features.data()[off..off + f]
    }

    /// `(features, labels)` for every reported class.
    pub fn training_pairs(&self) -> (Tensor, Vec<usize>) {
        let (m, f) = (self.per_class(), self.feature_dim());
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (k, _) in self.reported.iter().enumerate().filter(|(_, &r)| r) {
            for j in 0..m {
                data.extend_from_slice(self.feature(k, j));
                labels.push(k);
            }
        }
        (Tensor::new(vec![labels.len(), f], data).expect("consistent"), labels)
    }

    /// `MPFB | round: u64 | K: u32 | reported: K x u32 | tensor [K, m, F]`
    pub fn to_blob(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(BANK_MAGIC);
        w.u64(self.round as u64);
        w.u32(self.reported.len() as u32);
        for &r in &self.reported {
            w.u32(u32::from(r));
        }
        w.tensor(&self.features);
        w.finish()
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(BANK_MAGIC)?;
        let round = r.usize()?;
        let k = r.u32()? as usize;
        let reported = (0..k).map(|_| r.u32().map(|v| v != 0)).collect::<Result<Vec<_>>>()?;
        let features = r.tensor()?;
        r.finish()?;
        if features.shape().len() != 3 || features.shape()[0] != k {
            return Err(Error::Malformed(format!("bank shape {:?} for {k} classes", features.shape())));
        }
        Ok(Self {
            features,
            reported,
            round,
            class_distance: vec![None; k],
            loss_trace: Vec::new(),
        })
    }
}

struct ClassifierView<'a> {
    w: &'a [f64],
    b: &'a [f64],
    k: usize,
    f: usize,
}

impl<'a> ClassifierView<'a> {
    fn new(classifier: &'a [Tensor]) -> Result<Self> {
        if classifier.len() != 2 || classifier[0].shape().len() != 2 {
            return Err(Error::InvalidArgument("classifier must be one dense layer".into()));
        }
        let (k, f) = (classifier[0].shape()[0], classifier[0].shape()[1]);
        if classifier[1].len() != k {
            return Err(Error::shape(&[k], classifier[1].shape()));
        }
        Ok(Self {
            w: classifier[0].data(),
            b: classifier[1].data(),
            k,
            f,
        })
    }

    fn grad_len(&self) -> usize {
        self.k * self.f + self.k
    }

    fn residual(&self, h: &[f64], class: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.k)
            .map(|o| self.b[o] + self.w[o * self.f..(o + 1) * self.f].iter().zip(h).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let t = Tensor::new(vec![1, self.k], logits).expect("1 x K");
        let mut r = softmax(&t).into_data();
        r[class] -= 1.0;
        r
    }

    /// `(1/m) sum_j (r_j h_j^T, r_j)` flattened as `[W, b]`.
    fn induced_gradient(&self, feats: &[&[f64]], class: usize) -> Vec<f64> {
        let m = feats.len() as f64;
        let mut z = vec![0.0; self.grad_len()];
        for h in feats {
            let r = self.residual(h, class);
            for o in 0..self.k {
                for (zi, hv) in z[o * self.f..(o + 1) * self.f].iter_mut().zip(h.iter()) {
                    *zi += r[o] * hv / m;
                }
                z[self.k * self.f + o] += r[o] / m;
            }
        }
        z
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GradScale {
    None,
    /// True gradient of the mean loss.
    Exact,
    /// Gradient multiplied by `m * |K'|`, so each feature moves as if it alone
    /// set its class's induced gradient.
    Preconditioned,
}

/// Matching loss `mean_k (1 - cos(z^k, z_hat^k))` over the classes that can
/// be scored, with per-class distances. Optionally also the gradient with
/// respect to every feature in the bank.
fn matching_loss(
    z_glo: &BTreeMap<usize, Vec<f64>>,
    view: &ClassifierView,
    feats: &Tensor,
    grad: GradScale,
) -> (f64, Vec<Option<f64>>, Option<Vec<f64>>) {
    let with_grad = grad != GradScale::None;
    let (kk, m, f) = (feats.shape()[0], feats.shape()[1], feats.shape()[2]);
    let row = |k: usize, j: usize| &feats.data()[(k * m + j) * f..(k * m + j + 1) * f];
    let mut dist = vec![None; kk];
    let mut grads = with_grad.then(|| vec![0.0; feats.len()]);
    let mut active = Vec::new();
    for (&k, z) in z_glo.iter().filter(|(&k, _)| k < kk) {
        let rows: Vec<&[f64]> = (0..m).map(|j| row(k, j)).collect();
        let z_hat = view.induced_gradient(&rows, k);
        let (nz, nh) = (norm(z), norm(&z_hat));
        if nz == 0.0 || nh == 0.0 {
            log::warn!("class {k}: zero-norm gradient in feature matching, skipped this step");
            continue;
        }
        let c = dot(z, &z_hat) / (nz * nh);
        dist[k] = Some(1.0 - c);
        active.push((k, c, z_hat, nz, nh));
    }
    let n_active = active.len();
    if n_active == 0 {
        return (0.0, dist, grads);
    }
    let loss = active.iter().map(|(_, c, ..)| 1.0 - c).sum::<f64>() / n_active as f64;
    if let Some(g) = grads.as_mut() {
        let (kc, fc) = (view.k, view.f);
        for (k, c, z_hat, nz, nh) in &active {
            let z = &z_glo[k];
            // dc/dz_hat
            let gz: Vec<f64> = z.iter().zip(z_hat).map(|(a, b)| a / (nz * nh) - c * b / (nh * nh)).collect();
            let (gw, gb) = gz.split_at(kc * fc);
            let scale = match grad {
                GradScale::Exact => -1.0 / (m as f64 * n_active as f64),
                _ => -1.0,
            };
            for j in 0..m {
                let h = row(*k, j);
                let logits_r = view.residual(h, *k);
                let mut p = logits_r.clone();
                p[*k] += 1.0;
                // u = G_W h + G_b
                let u: Vec<f64> = (0..kc).map(|o| dot(&gw[o * fc..(o + 1) * fc], h) + gb[o]).collect();
                let pu = dot(&p, &u);
                // J u = p * u - p (p . u)
                let ju: Vec<f64> = p.iter().zip(&u).map(|(pi, ui)| pi * ui - pi * pu).collect();
                let out = &mut g[(k * m + j) * f..(k * m + j + 1) * f];
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for q in 0..kc {
                        acc += view.w[q * fc + i] * ju[q] + gw[q * fc + i] * logits_r[q];
                    }
                    *o = scale * acc;
                }
            }
        }
    }
    (loss, dist, grads)
}

/// Optimises a `K x m x F` feature bank by gradient descent so that the
/// classifier gradients it induces align with `z_glo`. Steps use the loss
/// gradient scaled by `m * |K'|`, which keeps the step size independent of
/// the bank's size.
pub fn synthesize_global_features(
    z_glo: &BTreeMap<usize, Vec<f64>>,
    classifier: &[Tensor],
    classes: usize,
    cfg: &SynthesisConfig,
) -> Result<GlobalFeatureBank> {
    let view = ClassifierView::new(classifier)?;
    if cfg.m == 0 {
        return Err(Error::InvalidArgument("features per class must be >= 1".into()));
    }
    if view.k != classes {
        return Err(Error::shape(&[classes, view.f], classifier[0].shape()));
    }
    if let Some((k, z)) = z_glo.iter().find(|(&k, z)| k >= classes || z.len() != view.grad_len()) {
        return Err(Error::InvalidArgument(format!(
            "class {k} gradient has length {} (expected {}, classes {classes})",
            z.len(),
            view.grad_len()
        )));
    }
    let (m, f) = (cfg.m, view.f);
    let reported: Vec<bool> = (0..classes).map(|k| z_glo.contains_key(&k)).collect();
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut rng = rng_from_seed(cfg.seed);
    let mut data: Vec<f64> = (0..classes * m * f).map(|_| normal.sample(&mut rng)).collect();
    for (k, _) in reported.iter().enumerate().filter(|(_, &r)| !r) {
        data[k * m * f..(k + 1) * m * f].iter_mut().for_each(|v| *v = 0.0);
    }
    let mut feats = Tensor::new(vec![classes, m, f], data)?;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, _, grad) = matching_loss(z_glo, &view, &feats, GradScale::Preconditioned);
        trace.push(loss);
        for (v, g) in feats.data_mut().iter_mut().zip(grad.expect("requested")) {
            *v -= cfg.lr * g;
        }
    }
    let (loss, class_distance, _) = matching_loss(z_glo, &view, &feats, GradScale::None);
    trace.push(loss);
    if !feats.is_finite() {
        return Err(Error::Malformed("feature synthesis diverged".into()));
    }
    Ok(GlobalFeatureBank {
        features: feats,
        reported,
        round: 0,
        class_distance,
        loss_trace: trace,
    })
}

/// Exposes the matching loss and its feature gradient for verification.
pub fn matching_loss_and_grad(
    z_glo: &BTreeMap<usize, Vec<f64>>,
    classifier: &[Tensor],
    features: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    let view = ClassifierView::new(classifier)?;
    if features.shape().len() != 3 || features.shape()[2] != view.f {
        return Err(Error::shape(&[view.k, 0, view.f], features.shape()));
    }
    let (l, _, g) = matching_loss(z_glo, &view, features, GradScale::Exact);
    Ok((l, g.expect("requested")))
}

/// `tau` full-batch gradient steps on the bank's reported classes, touching
/// the classifier only.
pub fn fine_tune_classifier(params: &ModelParams, bank: &GlobalFeatureBank, tau: usize, lr: f64) -> Result<ModelParams> {
    let mut out = params.clone();
    let (feats, labels) = bank.training_pairs();
    if labels.is_empty() || tau == 0 {
        return Ok(out);
    }
    if bank.feature_dim() != params.arch.feature_dim() || bank.classes() != params.arch.classes() {
        return Err(Error::shape(
            &[params.arch.classes(), bank.per_class(), params.arch.feature_dim()],
            bank.features.shape(),
        ));
    }
    for _ in 0..tau {
        let (_, g) = classifier_grads(&out.classifier, &feats, &labels)?;
        for (p, gt) in out.classifier.iter_mut().zip(&g) {
            for (pv, gv) in p.data_mut().iter_mut().zip(gt.data()) {
                *pv -= lr * gv;
            }
        }
    }
    Ok(out)
}
