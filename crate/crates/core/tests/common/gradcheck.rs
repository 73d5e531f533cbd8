//! Random small networks for checking reverse-mode gradients against
//! central differences.

use super::Grid;
use r2d2_core::autodiff_nn::{kernels, Activation, LossKind, Tape, Tensor, Var};

pub fn rand_tensor(g: &mut Grid, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| g.range(-scale, scale)).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs())
}

/// A small random network expressed as a closure over its parameter list,
/// plus the minimum |pre-activation| seen at ReLU/max-pool sites, used to
/// reject instances where finite differences would straddle a kink.
pub struct Case {
    pub params: Vec<Tensor>,
    pub build: Box<dyn Fn(&mut Tape, &[Var]) -> (Var, f64)>,
}

pub fn min_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

pub fn random_case(g: &mut Grid, id: usize) -> Case {
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::Softmax];
    let act = acts[id % acts.len()];
    let conv = id % 3 == 2;
    let loss_kind = match id % 3 {
        0 => LossKind::Mse,
        1 => LossKind::GaussianNll { variance: 0.7 },
        _ => LossKind::CrossEntropy,
    };
    let bayes = id % 5 == 4;
    let n = 3;
    if !conv {
        let (d_in, h, d_out) = (2 + id % 4, 3 + id % 5, 2 + id % 3);
        let x = rand_tensor(g, &[n, d_in], 1.5);
        let target = match loss_kind {
            LossKind::CrossEntropy => {
                let raw = rand_tensor(g, &[n, d_out], 1.0);
                kernels::activation(&raw, Activation::Softmax)
            }
            _ => rand_tensor(g, &[n, d_out], 1.0),
        };
        let mut params = vec![
            rand_tensor(g, &[h, d_in], 1.0),
            rand_tensor(g, &[h], 0.5),
            rand_tensor(g, &[d_out, h], 1.0),
            rand_tensor(g, &[d_out], 0.5),
        ];
        let eps: Vec<f64> = (0..h * d_in).map(|_| g.range(-2.0, 2.0)).collect();
        let mult: Vec<f64> = (0..h * d_in).map(|_| g.range(0.2, 2.0)).collect();
        let prior: Vec<f64> = (0..h * d_in).map(|_| g.range(0.3, 3.0)).collect();
        if bayes {
            params.push(rand_tensor(g, &[h, d_in], 1.0)); // rho
        }
        let build = move |tape: &mut Tape, p: &[Var]| {
            let xv = tape.constant(x.clone());
            let w1 = if bayes {
                tape.reparam(p[0], p[4], eps.clone(), mult.iter().map(|m| m.sqrt()).collect()).unwrap()
            } else {
                p[0]
            };
            let a = tape.linear(xv, w1, p[1]).unwrap();
            let kink = min_abs(tape.value(a).unwrap());
            let z = tape.activation(a, act).unwrap();
            let out = tape.linear(z, p[2], p[3]).unwrap();
            let mut loss = tape.loss(out, target.clone(), loss_kind).unwrap();
            if bayes {
                let kl = tape.gaussian_kl(p[0], p[4], mult.clone(), prior.clone()).unwrap();
                let kl = tape.scale(kl, 0.1).unwrap();
                loss = tape.add(loss, kl).unwrap();
            }
            (loss, if act == Activation::Relu { kink } else { f64::INFINITY })
        };
        Case { params, build: Box::new(build) }
    } else {
        let (c, hw, o, k, pad) = (1 + id % 2, 5, 2 + id % 2, 3, id % 2);
        let x = rand_tensor(g, &[2, c, hw, hw], 1.0);
        let conv_out = hw + 2 * pad - k + 1;
        let pooled = conv_out / 2;
        let flat = o * pooled * pooled;
        let classes = 3;
        let raw = rand_tensor(g, &[2, classes], 1.0);
        let target = kernels::activation(&raw, Activation::Softmax);
        let params = vec![
            rand_tensor(g, &[o, c, k, k], 1.0),
            rand_tensor(g, &[o], 0.5),
            rand_tensor(g, &[classes, flat], 1.0),
            rand_tensor(g, &[classes], 0.5),
        ];
        let build = move |tape: &mut Tape, p: &[Var]| {
            let xv = tape.constant(x.clone());
            let a = tape.conv2d(xv, p[0], p[1], pad).unwrap();
            let z = tape.activation(a, Activation::Tanh).unwrap();
            // ties inside a pooling window make max-pool non-differentiable
            let zv = tape.value(z).unwrap().clone();
            let m = tape.maxpool2d(z, 2).unwrap();
            let gap = pool_gap(&zv, 2);
            let f = tape.flatten(m).unwrap();
            let out = tape.linear(f, p[2], p[3]).unwrap();
            (tape.loss(out, target.clone(), loss_kind).unwrap(), gap)
        };
        Case { params, build: Box::new(build) }
    }
}

/// Smallest gap between the winner and runner-up in any pooling window.
pub fn pool_gap(x: &Tensor, size: usize) -> f64 {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let mut gap = f64::INFINITY;
    for plane in x.data().chunks(h * w) {
        for i in 0..h / size {
            for j in 0..w / size {
                let mut vals: Vec<f64> = (0..size * size)
                    .map(|k| plane[(i * size + k / size) * w + j * size + k % size])
                    .collect();
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                gap = gap.min(vals[0] - vals[1]);
            }
        }
    }
    gap
}

pub fn evaluate(case: &Case, params: &[Tensor]) -> (f64, f64) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let (loss, kink) = (case.build)(&mut tape, &vars);
    (tape.value(loss).unwrap().item().unwrap(), kink)
}

/// Largest relative error between reverse-mode and central differences
/// over every parameter entry, or `None` when the instance sits too close
/// to a kink for finite differences to be meaningful.
pub fn check_case(case: &Case) -> Option<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.params.iter().map(|p| tape.param(p.clone())).collect();
    let (loss, kink) = (case.build)(&mut tape, &vars);
    if kink < 1e-3 {
        return None;
    }
    let grads = tape.backward(loss).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (pi, v) in vars.iter().enumerate() {
        let g = grads.get(*v).unwrap();
        for j in 0..case.params[pi].len() {
            let mut up = case.params.clone();
            up[pi].data_mut()[j] += h;
            let mut down = case.params.clone();
            down[pi].data_mut()[j] -= h;
            let fd = (evaluate(case, &up).0 - evaluate(case, &down).0) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[j], fd));
        }
    }
    Some(worst)
}

/// Worst relative error of each of the first `count` generated networks
/// that are far enough from a kink to be checked.
pub fn random_network_errors(seed: u64, count: usize) -> Vec<f64> {
    let mut g = Grid::new(seed);
    let mut errors = Vec::with_capacity(count);
    let mut id = 0;
    while errors.len() < count {
        let case = random_case(&mut g, id);
        id += 1;
        if let Some(err) = check_case(&case) {
            errors.push(err);
        }
    }
    errors
}
