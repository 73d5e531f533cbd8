use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, Activation, LossKind};
use super::Tensor;
use crate::error::{Error, Result};
use crate::special_fn::{sigmoid, softplus};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Linear { x: usize, w: usize, b: usize },
    Conv2d { x: usize, k: usize, b: usize, padding: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    Act { x: usize, kind: Activation },
    /// `mu + sqrt(mult) softplus(rho) eps`
    Reparam { mu: usize, rho: usize, eps: Vec<f64>, sd_mult: Vec<f64> },
    /// `sum KL(N(mu, mult softplus(rho)^2) || N(0, prior_var))`
    GaussianKl { mu: usize, rho: usize, mult: Vec<f64>, prior_var: Vec<f64> },
    Loss { pred: usize, target: Tensor, kind: LossKind },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode recording. Nodes are appended in evaluation order, which
/// is therefore a topological order; [`Tape::backward`] walks it once in
/// reverse and consumes the tape.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), consumed: false }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Detached(v.index));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, mk: fn(usize, usize) -> Op) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(op, a, b)?;
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, mk(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let value = self.nodes[a].value.map(|v| v * c);
        Ok(self.push(value, Op::Scale(a, c), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let value = self.nodes[a].value.map(|v| v + c);
        Ok(self.push(value, Op::AddScalar(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let s = self.nodes[a].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let v = &self.nodes[a].value;
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let a = self.idx(a)?;
        let value = self.nodes[a].value.clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Collapse all but the leading axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a)?.shape().to_vec();
        let rest = shape[1..].iter().product();
        self.reshape(a, vec![shape[0], rest])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (x, w, b) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let value = kernels::linear(&self.nodes[x].value, &self.nodes[w].value, &self.nodes[b].value)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, padding: usize) -> Result<Var> {
        let (x, k, b) = (self.idx(x)?, self.idx(k)?, self.idx(b)?);
        let value = kernels::conv2d(&self.nodes[x].value, &self.nodes[k].value, &self.nodes[b].value, padding)?;
        Ok(self.push(value, Op::Conv2d { x, k, b, padding }, &[x, k, b]))
    }

    pub fn maxpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let x = self.idx(x)?;
        let (value, argmax) = kernels::maxpool2d(&self.nodes[x].value, size)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let x = self.idx(x)?;
        let value = kernels::activation(&self.nodes[x].value, kind);
        Ok(self.push(value, Op::Act { x, kind }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Reparameterized draw `mu + sd_mult * softplus(rho) * eps`, with
    /// `sd_mult` and `eps` held constant.
    pub fn reparam(&mut self, mu: Var, rho: Var, eps: Vec<f64>, sd_mult: Vec<f64>) -> Result<Var> {
        let (m, r) = (self.idx(mu)?, self.idx(rho)?);
        self.same_shape("reparam", m, r)?;
        let (mv, rv) = (&self.nodes[m].value, &self.nodes[r].value);
        if eps.len() != mv.len() || sd_mult.len() != mv.len() {
            return Err(Error::shape("reparam", format!("{} values, eps {}, mult {}", mv.len(), eps.len(), sd_mult.len())));
        }
        let data = (0..mv.len())
            .map(|i| mv.data()[i] + sd_mult[i] * softplus(rv.data()[i]) * eps[i])
            .collect();
        let value = Tensor::new(mv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Reparam { mu: m, rho: r, eps, sd_mult }, &[m, r]))
    }

    /// Summed KL of the diagonal Gaussian `N(mu, mult softplus(rho)^2)`
    /// against `N(0, prior_var)`.
    pub fn gaussian_kl(&mut self, mu: Var, rho: Var, mult: Vec<f64>, prior_var: Vec<f64>) -> Result<Var> {
        let (m, r) = (self.idx(mu)?, self.idx(rho)?);
        self.same_shape("gaussian_kl", m, r)?;
        let (mv, rv) = (self.nodes[m].value.data(), self.nodes[r].value.data());
        if mult.len() != mv.len() || prior_var.len() != mv.len() {
            return Err(Error::shape("gaussian_kl", format!("{} values, mult {}, prior {}", mv.len(), mult.len(), prior_var.len())));
        }
        let mut kl = 0.0;
        for i in 0..mv.len() {
            let s = softplus(rv[i]);
            let qv = mult[i] * s * s;
            kl += crate::divergence::gaussian_kl_term(mv[i], qv, 0.0, prior_var[i]);
        }
        Ok(self.push(Tensor::scalar(kl), Op::GaussianKl { mu: m, rho: r, mult, prior_var }, &[m, r]))
    }

    pub fn loss(&mut self, pred: Var, target: Tensor, kind: LossKind) -> Result<Var> {
        let p = self.idx(pred)?;
        let l = kernels::loss(&self.nodes[p].value, &target, kind)?;
        Ok(self.push(Tensor::scalar(l), Op::Loss { pred: p, target, kind }, &[p]))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape: a second call
    /// fails with [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let root = self.idx(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[root].value.shape().to_vec()));
        }
        if !self.nodes[root].requires_grad {
            return Err(Error::Detached(root));
        }
        self.consumed = true;
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(nodes[root].value.shape(), 1.0));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<Tensor>>, p: usize, t: Tensor| {
                if !nodes[p].requires_grad {
                    return;
                }
                match &mut grads[p] {
                    Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *b, g.map(|v| -v));
                    send(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, &nodes[*b].value, |x, y| x * y);
                    let gb = elementwise(&g, &nodes[*a].value, |x, y| x * y);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => send(&mut grads, *a, g.map(|v| v * c)),
                Op::AddScalar(a) => send(&mut grads, *a, g),
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    send(&mut grads, *a, Tensor::full(nodes[*a].value.shape(), gv));
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.len() as f64;
                    let gv = g.data()[0] / n;
                    send(&mut grads, *a, Tensor::full(nodes[*a].value.shape(), gv));
                }
                Op::Reshape(a) => {
                    let shaped = g.reshape(nodes[*a].value.shape().to_vec())?;
                    send(&mut grads, *a, shaped);
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_backward(&nodes[*x].value, &nodes[*w].value, &g);
                    send(&mut grads, *x, dx);
                    send(&mut grads, *w, dw);
                    send(&mut grads, *b, db);
                }
                Op::Conv2d { x, k, b, padding } => {
                    let (dx, dk, db) = kernels::conv2d_backward(&nodes[*x].value, &nodes[*k].value, *padding, &g);
                    send(&mut grads, *x, dx);
                    send(&mut grads, *k, dk);
                    send(&mut grads, *b, db);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(nodes[*x].value.shape());
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        dx.data_mut()[src] += gv;
                    }
                    send(&mut grads, *x, dx);
                }
                Op::Act { x, kind } => {
                    let dx = kernels::activation_backward(&nodes[*x].value, &node.value, &g, *kind);
                    send(&mut grads, *x, dx);
                }
                Op::Reparam { mu, rho, eps, sd_mult } => {
                    let rv = nodes[*rho].value.data();
                    let drho: Vec<f64> = (0..rv.len())
                        .map(|j| g.data()[j] * sd_mult[j] * eps[j] * sigmoid(rv[j]))
                        .collect();
                    let drho = Tensor::new(nodes[*rho].value.shape().to_vec(), drho)?;
                    send(&mut grads, *mu, g);
                    send(&mut grads, *rho, drho);
                }
                Op::GaussianKl { mu, rho, mult, prior_var } => {
                    let gv = g.data()[0];
                    let (mv, rv) = (nodes[*mu].value.data(), nodes[*rho].value.data());
                    let dmu: Vec<f64> = (0..mv.len()).map(|j| gv * mv[j] / prior_var[j]).collect();
                    let drho: Vec<f64> = (0..rv.len())
                        .map(|j| {
                            let s = softplus(rv[j]);
                            gv * (mult[j] * s / prior_var[j] - 1.0 / s) * sigmoid(rv[j])
                        })
                        .collect();
                    send(&mut grads, *mu, Tensor::new(nodes[*mu].value.shape().to_vec(), dmu)?);
                    send(&mut grads, *rho, Tensor::new(nodes[*rho].value.shape().to_vec(), drho)?);
                }
                Op::Loss { pred, target, kind } => {
                    let dp = kernels::loss_backward(&nodes[*pred].value, target, *kind, g.data()[0]);
                    send(&mut grads, *pred, dp);
                }
            }
        }
        // only leaves keep their gradients
        for (i, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}
