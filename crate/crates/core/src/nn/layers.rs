//! Raw kernels over row-major slices. Shapes are validated by the caller.

/// `out[b, o] = bias[o] + sum_i w[o, i] * x[b, i]`, with `w` stored `[out, in]`.
pub fn dense_forward(x: &[f64], w: &[f64], bias: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for b in 0..batch {
        let xb = &x[b * inp..(b + 1) * inp];
        let yb = &mut y[b * out..(b + 1) * out];
        for o in 0..out {
            let wo = &w[o * inp..(o + 1) * inp];
            yb[o] = bias[o] + wo.iter().zip(xb).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    y
}

pub struct DenseGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub dx: Option<Vec<f64>>,
}

pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    inp: usize,
    out: usize,
    need_dx: bool,
) -> DenseGrads {
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    for b in 0..batch {
        let xb = &x[b * inp..(b + 1) * inp];
        for o in 0..out {
            let g = dy[b * out + o];
            db[o] += g;
            if g != 0.0 {
                let row = &mut dw[o * inp..(o + 1) * inp];
                for (d, xv) in row.iter_mut().zip(xb) {
                    *d += g * xv;
                }
            }
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; batch * inp];
        for b in 0..batch {
            let dxb = &mut dx[b * inp..(b + 1) * inp];
            for o in 0..out {
                let g = dy[b * out + o];
                if g != 0.0 {
                    for (d, wv) in dxb.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                        *d += g * wv;
                    }
                }
            }
        }
        dx
    });
    DenseGrads { dw, db, dx }
}

/// Geometry of a valid (no padding), stride-1 square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.in_h + 1 - self.k
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 1 - self.k
    }

    pub fn in_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_ch * self.out_h() * self.out_w()
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.k * self.k
    }
}

/// Weights are stored `[out_ch, in_ch, k, k]`.
pub fn conv_forward(x: &[f64], w: &[f64], bias: &[f64], batch: usize, g: ConvGeom) -> Vec<f64> {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.k);
    let mut y = vec![0.0; batch * g.out_len()];
    for b in 0..batch {
        let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
        let yb = &mut y[b * g.out_len()..(b + 1) * g.out_len()];
        for co in 0..g.out_ch {
            let plane = &mut yb[co * oh * ow..(co + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..g.in_ch {
                let xin = &xb[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
                let kern = &w[(co * g.in_ch + ci) * k * k..(co * g.in_ch + ci + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let kv = kern[ky * k + kx];
                        for oy in 0..oh {
                            let src = &xin[(oy + ky) * g.in_w + kx..(oy + ky) * g.in_w + kx + ow];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub struct ConvGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub dx: Option<Vec<f64>>,
}

pub fn conv_backward(x: &[f64], w: &[f64], dy: &[f64], batch: usize, g: ConvGeom, need_dx: bool) -> ConvGrads {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.k);
    let mut dw = vec![0.0; g.weight_len()];
    let mut db = vec![0.0; g.out_ch];
    let mut dx = need_dx.then(|| vec![0.0; batch * g.in_len()]);
    for b in 0..batch {
        let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
        let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
        for co in 0..g.out_ch {
            let dplane = &dyb[co * oh * ow..(co + 1) * oh * ow];
            db[co] += dplane.iter().sum::<f64>();
            for ci in 0..g.in_ch {
                let base = (co * g.in_ch + ci) * k * k;
                let xin = &xb[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let src = &xin[(oy + ky) * g.in_w + kx..(oy + ky) * g.in_w + kx + ow];
                            let d = &dplane[oy * ow..(oy + 1) * ow];
                            acc += src.iter().zip(d).map(|(a, c)| a * c).sum::<f64>();
                        }
                        dw[base + ky * k + kx] += acc;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let off = b * g.in_len() + ci * g.in_h * g.in_w;
                    let dxin = &mut dx[off..off + g.in_h * g.in_w];
                    for ky in 0..k {
                        for kx in 0..k {
                            let kv = w[base + ky * k + kx];
                            for oy in 0..oh {
                                let dst = &mut dxin[(oy + ky) * g.in_w + kx..(oy + ky) * g.in_w + kx + ow];
                                let d = &dplane[oy * ow..(oy + 1) * ow];
                                for (t, s) in dst.iter_mut().zip(d) {
                                    *t += kv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dw, db, dx }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Routes `dy` through a ReLU whose pre-activation was `pre`.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(&p, &d)| if p > 0.0 { d } else { 0.0 }).collect()
}
