use rand::Rng as _;

use super::layers::{self, ConvGeom};
use super::loss;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CONV_KERNEL: usize = 5;

/// The fixed model zoo. In every variant the classifier is the final dense
/// layer and everything before it is the feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// No extractor: features are the flattened input. Used as a probe and
    /// for classifier-only experiments.
    Linear { input: usize, classes: usize },
    /// flatten -> dense -> ReLU -> dense
    Mlp {
        input: usize,
        hidden: usize,
        classes: usize,
    },
    /// conv5x5 -> ReLU -> conv5x5 -> ReLU -> dense, valid padding, stride 1.
    TinyConv {
        channels: usize,
        height: usize,
        width: usize,
        conv1: usize,
        conv2: usize,
        classes: usize,
    },
}

impl Architecture {
    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Linear { classes, .. }
            | Architecture::Mlp { classes, .. }
            | Architecture::TinyConv { classes, .. } => classes,
        }
    }

    /// Values per input sample.
    pub fn input_len(&self) -> usize {
        match *self {
            Architecture::Linear { input, .. } | Architecture::Mlp { input, .. } => input,
            Architecture::TinyConv {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }

    fn convs(&self) -> Option<(ConvGeom, ConvGeom)> {
        match *self {
            Architecture::TinyConv {
                channels,
                height,
                width,
                conv1,
                conv2,
                ..
            } => {
                let g1 = ConvGeom {
                    in_ch: channels,
                    out_ch: conv1,
                    in_h: height,
                    in_w: width,
                    k: CONV_KERNEL,
                };
                let g2 = ConvGeom {
                    in_ch: conv1,
                    out_ch: conv2,
                    in_h: g1.out_h(),
                    in_w: g1.out_w(),
                    k: CONV_KERNEL,
                };
                Some((g1, g2))
            }
            _ => None,
        }
    }

    /// `(C, H, W)` of the activation the BAVD layer sees. Dense hidden
    /// vectors are treated as `1 x 1 x H`.
    pub fn hidden_shape(&self) -> (usize, usize, usize) {
        match *self {
            Architecture::Linear { input, .. } => (1, 1, input),
            Architecture::Mlp { hidden, .. } => (1, 1, hidden),
            Architecture::TinyConv { .. } => {
                let (_, g2) = self.convs().expect("conv arch");
                (g2.out_ch, g2.out_h(), g2.out_w())
            }
        }
    }

    /// Spatial `(H, W)` of the activation map.
    pub fn map_shape(&self) -> (usize, usize) {
        let (_, h, w) = self.hidden_shape();
        (h, w)
    }

    /// Classifier input width.
    pub fn feature_dim(&self) -> usize {
        let (c, h, w) = self.hidden_shape();
        c * h * w
    }

    pub fn extractor_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Architecture::Linear { .. } => vec![],
            Architecture::Mlp { input, hidden, .. } => vec![vec![hidden, input], vec![hidden]],
            Architecture::TinyConv { .. } => {
                let (g1, g2) = self.convs().expect("conv arch");
                vec![
                    vec![g1.out_ch, g1.in_ch, g1.k, g1.k],
                    vec![g1.out_ch],
                    vec![g2.out_ch, g2.in_ch, g2.k, g2.k],
                    vec![g2.out_ch],
                ]
            }
        }
    }

    pub fn classifier_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![self.classes(), self.feature_dim()], vec![self.classes()]]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("{m} in {self:?}")));
        if self.classes() < 2 {
            return bad("need at least 2 classes");
        }
        match *self {
            Architecture::Linear { input: 0, .. } => bad("zero input width"),
            Architecture::Mlp { input, hidden, .. } if input == 0 || hidden == 0 => bad("zero width"),
            Architecture::TinyConv {
                channels,
                height,
                width,
                conv1,
                conv2,
                ..
            } => {
                if channels == 0 || conv1 == 0 || conv2 == 0 {
                    bad("zero channel count")
                } else if height < 2 * CONV_KERNEL - 1 || width < 2 * CONV_KERNEL - 1 {
                    bad("input smaller than two stacked 5x5 kernels")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Flat parameter store split into extractor (`u`) and classifier (`v`).
///
/// `flatten` walks extractor tensors then classifier tensors, each in
/// declaration order; that ordering is what deltas and similarity use.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub extractor: Vec<Tensor>,
    pub classifier: Vec<Tensor>,
}

/// One gradient tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<Tensor>,
    pub classifier: Vec<Tensor>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.extractor
            .iter()
            .chain(&self.classifier)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            extractor: arch.extractor_shapes().into_iter().map(Tensor::zeros).collect(),
            classifier: arch.classifier_shapes().into_iter().map(Tensor::zeros).collect(),
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation for weights
    /// and biases alike.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(arch);
        let fan_ins: Vec<usize> = match arch {
            Architecture::Linear { input, .. } => vec![input],
            Architecture::Mlp { input, hidden, .. } => vec![input, hidden],
            Architecture::TinyConv { .. } => {
                let (g1, g2) = arch.convs().expect("conv arch");
                vec![g1.in_ch * 25, g2.in_ch * 25, arch.feature_dim()]
            }
        };
        let layers = p.extractor.chunks_mut(2).chain(p.classifier.chunks_mut(2));
        for (pair, fan_in) in layers.zip(fan_ins) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for t in pair {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            }
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.extractor.iter().chain(&self.classifier).map(Tensor::len).sum()
    }

    pub fn classifier_len(&self) -> usize {
        self.classifier.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.extractor.iter().chain(&self.classifier) {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn flatten_classifier(&self) -> Vec<f64> {
        self.classifier.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(arch);
        if flat.len() != p.num_params() {
            return Err(Error::shape(&[p.num_params()], &[flat.len()]));
        }
        let mut off = 0;
        for t in p.extractor.iter_mut().chain(p.classifier.iter_mut()) {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.extractor.iter().chain(&self.classifier).all(Tensor::is_finite)
    }

    pub fn check_congruent(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::InvalidArgument(format!(
                "architecture mismatch: {:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }
}

/// Spatial keep-mask over the `H x W` positions of the BAVD activation,
/// broadcast over batch and channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMask {
    pub height: usize,
    pub width: usize,
    pub keep: Vec<bool>,
}

impl SpatialMask {
    pub fn all(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            keep: vec![true; height * width],
        }
    }

    /// Zeroes dropped positions of a flat `B x C x H x W` buffer in place.
    pub fn apply(&self, data: &mut [f64]) {
        let plane = self.height * self.width;
        for chunk in data.chunks_mut(plane) {
            for (v, &k) in chunk.iter_mut().zip(&self.keep) {
                if !k {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn dropped(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }
}

pub struct Forward {
    pub features: Tensor,
    pub logits: Tensor,
}

/// Forward pass with everything backward needs.
pub struct ForwardTrace {
    /// Classifier input, `B x F`, after masking.
    pub features: Tensor,
    pub logits: Tensor,
    /// Activation at the BAVD site before masking, `B x C x H x W`.
    pub hidden: Tensor,
    pre: Vec<Vec<f64>>,
}

fn check_batch(arch: &Architecture, batch: &Tensor) -> Result<usize> {
    let rows = batch.rows();
    if batch.shape().len() < 2 || batch.row_len() != arch.input_len() {
        return Err(Error::shape(&[rows, arch.input_len()], batch.shape()));
    }
    Ok(rows)
}

fn check_mask(arch: &Architecture, mask: Option<&SpatialMask>) -> Result<()> {
    if let Some(m) = mask {
        let (h, w) = arch.map_shape();
        if (m.height, m.width) != (h, w) || m.keep.len() != h * w {
            return Err(Error::shape(&[h, w], &[m.height, m.width]));
        }
    }
    Ok(())
}

pub fn forward_trace(params: &ModelParams, batch: &Tensor, mask: Option<&SpatialMask>) -> Result<ForwardTrace> {
    let arch = params.arch;
    let b = check_batch(&arch, batch)?;
    check_mask(&arch, mask)?;
    let (c, h, w) = arch.hidden_shape();
    let x = batch.data();
    let (hidden, pre) = match arch {
        Architecture::Linear { .. } => (x.to_vec(), vec![]),
        Architecture::Mlp { input, hidden, .. } => {
            let a1 = layers::dense_forward(
                x,
                params.extractor[0].data(),
                params.extractor[1].data(),
                b,
                input,
                hidden,
            );
            (layers::relu(&a1), vec![a1])
        }
        Architecture::TinyConv { .. } => {
            let (g1, g2) = arch.convs().expect("conv arch");
            let c1 = layers::conv_forward(x, params.extractor[0].data(), params.extractor[1].data(), b, g1);
            let r1 = layers::relu(&c1);
            let c2 = layers::conv_forward(&r1, params.extractor[2].data(), params.extractor[3].data(), b, g2);
            (layers::relu(&c2), vec![c1, r1, c2])
        }
    };
    let mut feats = hidden.clone();
    if let Some(m) = mask {
        m.apply(&mut feats);
    }
    let f = arch.feature_dim();
    let logits = layers::dense_forward(
        &feats,
        params.classifier[0].data(),
        params.classifier[1].data(),
        b,
        f,
        arch.classes(),
    );
    Ok(ForwardTrace {
        features: Tensor::new(vec![b, f], feats)?,
        logits: Tensor::new(vec![b, arch.classes()], logits)?,
        hidden: Tensor::new(vec![b, c, h, w], hidden)?,
        pre,
    })
}

/// Plain forward pass: `features = f(x; u)`, `logits = g(features; v)`.
pub fn forward(params: &ModelParams, batch: &Tensor) -> Result<Forward> {
    let t = forward_trace(params, batch, None)?;
    Ok(Forward {
        features: t.features,
        logits: t.logits,
    })
}

pub struct Backward {
    pub loss: f64,
    pub grads: Gradients,
    /// Pre-mask BAVD-site activation from the forward pass.
    pub hidden: Tensor,
}

/// Loss and full gradient, optionally with a BAVD mask in the forward pass.
/// Masked units pass zero gradient.
pub fn backward_masked(
    params: &ModelParams,
    batch: &Tensor,
    labels: &[usize],
    mask: Option<&SpatialMask>,
) -> Result<Backward> {
    let trace = forward_trace(params, batch, mask)?;
    let (loss, dlogits) = loss::cross_entropy_with_grad(&trace.logits, labels)?;
    let arch = params.arch;
    let b = labels.len();
    let f = arch.feature_dim();
    let need_dx = !matches!(arch, Architecture::Linear { .. });
    let cg = layers::dense_backward(
        trace.features.data(),
        params.classifier[0].data(),
        &dlogits,
        b,
        f,
        arch.classes(),
        need_dx,
    );
    let classifier = vec![
        Tensor::new(params.classifier[0].shape().to_vec(), cg.dw)?,
        Tensor::new(params.classifier[1].shape().to_vec(), cg.db)?,
    ];
    let extractor = match arch {
        Architecture::Linear { .. } => vec![],
        Architecture::Mlp { input, hidden, .. } => {
            let mut dh = cg.dx.expect("requested");
            if let Some(m) = mask {
                m.apply(&mut dh);
            }
            let da1 = layers::relu_backward(&trace.pre[0], &dh);
            let g = layers::dense_backward(batch.data(), params.extractor[0].data(), &da1, b, input, hidden, false);
            vec![
                Tensor::new(vec![hidden, input], g.dw)?,
                Tensor::new(vec![hidden], g.db)?,
            ]
        }
        Architecture::TinyConv { .. } => {
            let (g1, g2) = arch.convs().expect("conv arch");
            let mut dh = cg.dx.expect("requested");
            if let Some(m) = mask {
                m.apply(&mut dh);
            }
            let dc2 = layers::relu_backward(&trace.pre[2], &dh);
            let k2 = layers::conv_backward(&trace.pre[1], params.extractor[2].data(), &dc2, b, g2, true);
            let dc1 = layers::relu_backward(&trace.pre[0], &k2.dx.expect("requested"));
            let k1 = layers::conv_backward(batch.data(), params.extractor[0].data(), &dc1, b, g1, false);
            vec![
                Tensor::new(params.extractor[0].shape().to_vec(), k1.dw)?,
                Tensor::new(params.extractor[1].shape().to_vec(), k1.db)?,
                Tensor::new(params.extractor[2].shape().to_vec(), k2.dw)?,
                Tensor::new(params.extractor[3].shape().to_vec(), k2.db)?,
            ]
        }
    };
    Ok(Backward {
        loss,
        grads: Gradients { extractor, classifier },
        hidden: trace.hidden,
    })
}

/// Mean cross-entropy loss and its gradient with respect to every parameter.
pub fn backward(params: &ModelParams, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
    let out = backward_masked(params, batch, labels, None)?;
    Ok((out.loss, out.grads))
}

/// `p' = p - lr * g` for every parameter.
pub fn sgd_step(params: &ModelParams, grads: &Gradients, lr: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, lr)?;
    Ok(next)
}

pub fn sgd_step_in_place(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.extractor.len() != params.extractor.len() || grads.classifier.len() != params.classifier.len() {
        return Err(Error::InvalidArgument("gradient structure does not match parameters".into()));
    }
    let pairs = params
        .extractor
        .iter_mut()
        .zip(&grads.extractor)
        .chain(params.classifier.iter_mut().zip(&grads.classifier));
    for (p, g) in pairs {
        if p.shape() != g.shape() {
            return Err(Error::shape(p.shape(), g.shape()));
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

/// Gradient of the mean cross-entropy with respect to the classifier only,
/// evaluated on precomputed features. Returns `(loss, [dW, db])`.
pub fn classifier_grads(classifier: &[Tensor], features: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    if classifier.len() != 2 || classifier[0].shape().len() != 2 {
        return Err(Error::InvalidArgument("classifier must be one dense layer".into()));
    }
    let (k, f) = (classifier[0].shape()[0], classifier[0].shape()[1]);
    let b = features.rows();
    if features.row_len() != f || features.shape().len() != 2 {
        return Err(Error::shape(&[b, f], features.shape()));
    }
    let logits = Tensor::new(
        vec![b, k],
        layers::dense_forward(features.data(), classifier[0].data(), classifier[1].data(), b, f, k),
    )?;
    let (loss, dlogits) = loss::cross_entropy_with_grad(&logits, labels)?;
    let g = layers::dense_backward(features.data(), classifier[0].data(), &dlogits, b, f, k, false);
    Ok((loss, vec![Tensor::new(vec![k, f], g.dw)?, Tensor::new(vec![k], g.db)?]))
}
