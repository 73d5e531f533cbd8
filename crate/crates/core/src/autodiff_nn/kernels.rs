//! Forward kernels and their adjoints, free of any tape bookkeeping. The
//! prediction path calls these directly.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::special_fn::sigmoid;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// Over the last axis.
    Softmax,
    /// Over the last axis.
    LogSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    /// Gaussian negative log-likelihood with a fixed observation variance.
    GaussianNll { variance: f64 },
    /// Cross-entropy of logits against a row-stochastic target.
    CrossEntropy,
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

/// `y = x w^T / sqrt(d_in) + b`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d_in) = dims2(x, "linear")?;
    let (d_out, w_in) = dims2(w, "linear")?;
    if w_in != d_in || b.shape() != [d_out] {
        return Err(Error::shape(
            "linear",
            format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let scale = 1.0 / (d_in as f64).sqrt();
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        let xr = &xd[i * d_in..(i + 1) * d_in];
        let or = &mut out[i * d_out..(i + 1) * d_out];
        for (o, slot) in or.iter_mut().enumerate() {
            let wr = &wd[o * d_in..(o + 1) * d_in];
            let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            *slot = dot * scale + bd[o];
        }
    }
    Tensor::new(vec![n, d_out], out)
}

/// Adjoints of [`linear`]: `(dx, dw, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[0];
    let scale = 1.0 / (d_in as f64).sqrt();
    let (xd, wd, g) = (x.data(), w.data(), dy.data());
    let mut dx = vec![0.0; n * d_in];
    let mut dw = vec![0.0; d_out * d_in];
    let mut db = vec![0.0; d_out];
    for i in 0..n {
        let xr = &xd[i * d_in..(i + 1) * d_in];
        let dxr = &mut dx[i * d_in..(i + 1) * d_in];
        for o in 0..d_out {
            let go = g[i * d_out + o];
            if go == 0.0 {
                continue;
            }
            db[o] += go;
            let gs = go * scale;
            let wr = &wd[o * d_in..(o + 1) * d_in];
            let dwr = &mut dw[o * d_in..(o + 1) * d_in];
            for k in 0..d_in {
                dxr[k] += gs * wr[k];
                dwr[k] += gs * xr[k];
            }
        }
    }
    (
        Tensor::new(vec![n, d_in], dx).expect("shape"),
        Tensor::new(vec![d_out, d_in], dw).expect("shape"),
        Tensor::vector(db),
    )
}

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        s => Err(Error::shape(op, format!("expected 4 dimensions, got {s:?}"))),
    }
}

/// Stride-1 cross-correlation with symmetric zero padding, scaled by
/// `1 / sqrt(c_in k^2)`.
pub fn conv2d(x: &Tensor, k: &Tensor, b: &Tensor, padding: usize) -> Result<Tensor> {
    let [n, c, h, w] = dims4(x, "conv2d")?;
    let [o, kc, kh, kw] = dims4(k, "conv2d")?;
    if kc != c || kh != kw || b.shape() != [o] || kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::shape(
            "conv2d",
            format!("x {:?}, kernel {:?}, bias {:?}, padding {padding}", x.shape(), k.shape(), b.shape()),
        ));
    }
    let (oh, ow) = (h + 2 * padding - kh + 1, w + 2 * padding - kw + 1);
    let scale = 1.0 / ((c * kh * kw) as f64).sqrt();
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oc in 0..o {
            let obase = (ni * o + oc) * oh * ow;
            for ic in 0..c {
                let xbase = (ni * c + ic) * h * w;
                let kbase = (oc * c + ic) * kh * kw;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let kv = kd[kbase + ki * kw + kj] * scale;
                        for yi in 0..oh {
                            let xi = yi + ki;
                            if xi < padding || xi >= h + padding {
                                continue;
                            }
                            let xrow = xbase + (xi - padding) * w;
                            let orow = obase + yi * ow;
                            for yj in 0..ow {
                                let xj = yj + kj;
                                if xj < padding || xj >= w + padding {
                                    continue;
                                }
                                out[orow + yj] += kv * xd[xrow + xj - padding];
                            }
                        }
                    }
                }
            }
            for v in &mut out[obase..obase + oh * ow] {
                *v += bd[oc];
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out)
}

/// Adjoints of [`conv2d`]: `(dx, dk, db)`.
pub fn conv2d_backward(x: &Tensor, k: &Tensor, padding: usize, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = dims4(x, "conv2d").expect("checked in forward");
    let [o, _, kh, kw] = dims4(k, "conv2d").expect("checked in forward");
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let scale = 1.0 / ((c * kh * kw) as f64).sqrt();
    let (xd, kd, g) = (x.data(), k.data(), dy.data());
    let mut dx = vec![0.0; xd.len()];
    let mut dk = vec![0.0; kd.len()];
    let mut db = vec![0.0; o];
    for ni in 0..n {
        for oc in 0..o {
            let obase = (ni * o + oc) * oh * ow;
            db[oc] += g[obase..obase + oh * ow].iter().sum::<f64>();
            for ic in 0..c {
                let xbase = (ni * c + ic) * h * w;
                let kbase = (oc * c + ic) * kh * kw;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let kv = kd[kbase + ki * kw + kj] * scale;
                        let mut acc = 0.0;
                        for yi in 0..oh {
                            let xi = yi + ki;
                            if xi < padding || xi >= h + padding {
                                continue;
                            }
                            let xrow = xbase + (xi - padding) * w;
                            let orow = obase + yi * ow;
                            for yj in 0..ow {
                                let xj = yj + kj;
                                if xj < padding || xj >= w + padding {
                                    continue;
                                }
                                let gv = g[orow + yj];
                                acc += gv * xd[xrow + xj - padding];
                                dx[xrow + xj - padding] += gv * kv;
                            }
                        }
                        dk[kbase + ki * kw + kj] += acc * scale;
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("shape"),
        Tensor::new(k.shape().to_vec(), dk).expect("shape"),
        Tensor::vector(db),
    )
}

/// Non-overlapping `size x size` max pooling; trailing rows/columns that
/// do not fill a window are dropped. Returns the output and, per output
/// cell, the flat input index that won.
pub fn maxpool2d(x: &Tensor, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = dims4(x, "maxpool2d")?;
    if size == 0 || size > h || size > w {
        return Err(Error::shape("maxpool2d", format!("window {size} on {:?}", x.shape())));
    }
    let (oh, ow) = (h / size, w / size);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * size * w + j * size;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (i * size + di) * w + j * size + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

fn last_axis(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Tanh => x.map(f64::tanh),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Softmax | Activation::LogSoftmax => {
            let k = last_axis(x);
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(k) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                    if kind == Activation::Softmax {
                        *v = v.exp();
                    }
                }
            }
            out
        }
    }
}

/// Adjoint of [`activation`] given the input `x`, the output `y` and the
/// upstream gradient.
pub fn activation_backward(x: &Tensor, y: &Tensor, dy: &Tensor, kind: Activation) -> Tensor {
    let (xd, yd, g) = (x.data(), y.data(), dy.data());
    let data: Vec<f64> = match kind {
        Activation::Relu => xd.iter().zip(g).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect(),
        Activation::Tanh => yd.iter().zip(g).map(|(&t, &gv)| gv * (1.0 - t * t)).collect(),
        Activation::Sigmoid => yd.iter().zip(g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect(),
        Activation::Softmax => {
            let k = last_axis(x);
            let mut out = vec![0.0; yd.len()];
            for ((orow, yrow), grow) in out.chunks_mut(k).zip(yd.chunks(k)).zip(g.chunks(k)) {
                let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                for j in 0..k {
                    orow[j] = yrow[j] * (grow[j] - dot);
                }
            }
            out
        }
        Activation::LogSoftmax => {
            let k = last_axis(x);
            let mut out = vec![0.0; yd.len()];
            for ((orow, yrow), grow) in out.chunks_mut(k).zip(yd.chunks(k)).zip(g.chunks(k)) {
                let gsum: f64 = grow.iter().sum();
                for j in 0..k {
                    orow[j] = grow[j] - yrow[j].exp() * gsum;
                }
            }
            out
        }
    };
    Tensor::new(x.shape().to_vec(), data).expect("shape")
}

/// Mean-reduced loss.
pub fn loss(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss", format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let (p, t) = (pred.data(), target.data());
    match kind {
        LossKind::Mse => Ok(p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64),
        LossKind::GaussianNll { variance } => {
            let c = 0.5 * (LN_2PI + variance.ln());
            let s: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(c + s / (2.0 * variance * p.len() as f64))
        }
        LossKind::CrossEntropy => {
            let rows = rows_of(pred);
            let ls = activation(pred, Activation::LogSoftmax);
            let s: f64 = ls.data().iter().zip(t).map(|(l, y)| if *y == 0.0 { 0.0 } else { -y * l }).sum();
            Ok(s / rows as f64)
        }
    }
}

fn rows_of(t: &Tensor) -> usize {
    t.len() / last_axis(t).max(1)
}

/// Gradient of [`loss`] with respect to `pred`, scaled by `upstream`.
pub fn loss_backward(pred: &Tensor, target: &Tensor, kind: LossKind, upstream: f64) -> Tensor {
    let (p, t) = (pred.data(), target.data());
    let n = p.len() as f64;
    let data: Vec<f64> = match kind {
        LossKind::Mse => p.iter().zip(t).map(|(a, b)| upstream * 2.0 * (a - b) / n).collect(),
        LossKind::GaussianNll { variance } => {
            p.iter().zip(t).map(|(a, b)| upstream * (a - b) / (variance * n)).collect()
        }
        LossKind::CrossEntropy => {
            let k = last_axis(pred);
            let rows = rows_of(pred) as f64;
            let sm = activation(pred, Activation::Softmax);
            let mut out = vec![0.0; p.len()];
            for ((orow, srow), trow) in out.chunks_mut(k).zip(sm.data().chunks(k)).zip(t.chunks(k)) {
                let tsum: f64 = trow.iter().sum();
                for j in 0..k {
                    orow[j] = upstream * (srow[j] * tsum - trow[j]) / rows;
                }
            }
            out
        }
    };
    Tensor::new(pred.shape().to_vec(), data).expect("shape")
}
