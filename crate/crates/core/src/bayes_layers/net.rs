use serde::{Deserialize, Serialize};

use super::{apply_noise, draw_noise, init_horseshoe, init_layer, sd_multipliers, BayesLayer, PriorConfig, PriorFamily};
use crate::autodiff_nn::{kernels, Activation, Tape, Tensor, Var};
use crate::distributions::RngState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize, padding: usize },
    Activation { activation: Activation },
    MaxPool { size: usize },
    Flatten,
}

impl LayerSpec {
    fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => Some(vec![outputs, inputs]),
            LayerSpec::Conv { in_channels, out_channels, kernel, .. } => {
                Some(vec![out_channels, in_channels, kernel, kernel])
            }
            _ => None,
        }
    }
}

/// A sequential Bayesian network. Parameterized layers own a [`BayesLayer`]
/// each, in the order they appear in `specs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    specs: Vec<LayerSpec>,
    pub layers: Vec<BayesLayer>,
    pub prior: PriorConfig,
}

/// One reparameterized draw of every layer: the noise, the per-parameter
/// standard-deviation multipliers it was scaled with, and the weights.
#[derive(Debug, Clone)]
pub struct WeightDraw {
    pub eps: Vec<Vec<f64>>,
    pub sd_mult: Vec<Vec<f64>>,
    pub weights: Vec<(Tensor, Tensor)>,
}

impl BayesNet {
    /// Layer `i` draws its initial state from `rng.fork(i)`.
    pub fn new(specs: Vec<LayerSpec>, prior: PriorConfig, rng: &RngState) -> Result<Self> {
        prior.validate()?;
        let mut layers = Vec::new();
        for shape in specs.iter().filter_map(LayerSpec::weight_shape) {
            let mut lr = rng.fork(layers.len() as u64);
            let (weights, shrinkage) = init_layer(&shape, &prior, &mut lr)?;
            let horseshoe = (prior.family == PriorFamily::Horseshoe)
                .then(|| init_horseshoe(weights.num_params(), &prior, &mut lr));
            layers.push(BayesLayer { weights, shrinkage, horseshoe });
        }
        if layers.is_empty() {
            return Err(Error::shape("BayesNet::new", "no parameterized layer"));
        }
        Ok(BayesNet { specs, layers, prior })
    }

    /// Reassembles a network from stored layers, checking that every layer
    /// matches its spec.
    pub fn from_parts(specs: Vec<LayerSpec>, layers: Vec<BayesLayer>, prior: PriorConfig) -> Result<Self> {
        prior.validate()?;
        let shapes: Vec<Vec<usize>> = specs.iter().filter_map(LayerSpec::weight_shape).collect();
        if shapes.len() != layers.len() || layers.is_empty() {
            return Err(Error::Length { expected: shapes.len(), got: layers.len() });
        }
        for (shape, l) in shapes.iter().zip(&layers) {
            let w = &l.weights;
            let p = w.num_params();
            let ok = w.mu.shape() == shape.as_slice()
                && w.rho.shape() == shape.as_slice()
                && w.mu_bias.len() == shape[0]
                && w.rho_bias.len() == shape[0]
                && l.shrinkage.as_ref().is_none_or(|s| s.psi.len() == p && s.phi.len() == p)
                && l.horseshoe.as_ref().is_none_or(|h| h.prior_var.len() == p);
            if !ok {
                return Err(Error::shape("BayesNet::from_parts", format!("layer does not match spec {shape:?}")));
            }
        }
        Ok(BayesNet { specs, layers, prior })
    }

    /// Fully connected network with `hidden` hidden layers of `width` units;
    /// `hidden = 0` is a single linear map.
    pub fn mlp(
        input_dim: usize,
        width: usize,
        hidden: usize,
        output_dim: usize,
        activation: Activation,
        prior: PriorConfig,
        rng: &RngState,
    ) -> Result<Self> {
        let mut specs = Vec::new();
        let mut d = input_dim;
        for _ in 0..hidden {
            specs.push(LayerSpec::Linear { inputs: d, outputs: width });
            specs.push(LayerSpec::Activation { activation });
            d = width;
        }
        specs.push(LayerSpec::Linear { inputs: d, outputs: output_dim });
        BayesNet::new(specs, prior, rng)
    }

    /// LeNet-5 layout for `1 x 28 x 28` images and `classes` logits.
    pub fn lenet(classes: usize, prior: PriorConfig, rng: &RngState) -> Result<Self> {
        let relu = LayerSpec::Activation { activation: Activation::Relu };
        let specs = vec![
            LayerSpec::Conv { in_channels: 1, out_channels: 6, kernel: 5, padding: 2 },
            relu.clone(),
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv { in_channels: 6, out_channels: 16, kernel: 5, padding: 0 },
            relu.clone(),
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { inputs: 400, outputs: 120 },
            relu.clone(),
            LayerSpec::Linear { inputs: 120, outputs: 84 },
            relu,
            LayerSpec::Linear { inputs: 84, outputs: classes },
        ];
        BayesNet::new(specs, prior, rng)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.num_params()).sum()
    }

    /// Variational means over all layers, each in `[weights, biases]` order.
    pub fn flat_means(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.flat_mu()).collect()
    }

    /// Splits a flat parameter vector into per-layer `(weights, biases)`.
    pub fn unflatten(&self, theta: &[f64]) -> Result<Vec<(Tensor, Tensor)>> {
        if theta.len() != self.num_params() {
            return Err(Error::Length { expected: self.num_params(), got: theta.len() });
        }
        let mut off = 0;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (nw, nb) = (l.weights.mu.len(), l.weights.mu_bias.len());
            let w = Tensor::new(l.weights.mu.shape().to_vec(), theta[off..off + nw].to_vec())?;
            let b = Tensor::vector(theta[off + nw..off + nw + nb].to_vec());
            off += nw + nb;
            out.push((w, b));
        }
        Ok(out)
    }

    /// Draws noise for every layer in order, then the weights.
    pub fn draw(&self, rng: &mut RngState) -> WeightDraw {
        let mut draw = WeightDraw { eps: Vec::new(), sd_mult: Vec::new(), weights: Vec::new() };
        for l in &self.layers {
            let eps = draw_noise(l.weights.num_params(), rng);
            let mult = sd_multipliers(l);
            draw.weights.push(apply_noise(&l.weights, &mult, &eps));
            draw.eps.push(eps);
            draw.sd_mult.push(mult);
        }
        draw
    }

    /// Means of every layer as `(weights, biases)`.
    pub fn mean_weights(&self) -> Vec<(Tensor, Tensor)> {
        self.layers.iter().map(|l| (l.weights.mu.clone(), l.weights.mu_bias.clone())).collect()
    }

    /// Forward pass with concrete weights, outside any tape.
    pub fn forward_with(&self, x: &Tensor, weights: &[(Tensor, Tensor)]) -> Result<Tensor> {
        if weights.len() != self.layers.len() {
            return Err(Error::Length { expected: self.layers.len(), got: weights.len() });
        }
        let mut h = x.clone();
        let mut k = 0;
        for spec in &self.specs {
            h = match *spec {
                LayerSpec::Linear { .. } => {
                    k += 1;
                    kernels::linear(&h, &weights[k - 1].0, &weights[k - 1].1)?
                }
                LayerSpec::Conv { padding, .. } => {
                    k += 1;
                    kernels::conv2d(&h, &weights[k - 1].0, &weights[k - 1].1, padding)?
                }
                LayerSpec::Activation { activation } => kernels::activation(&h, activation),
                LayerSpec::MaxPool { size } => kernels::maxpool2d(&h, size)?.0,
                LayerSpec::Flatten => {
                    let n = h.shape()[0];
                    let rest = h.len() / n.max(1);
                    h.reshape(vec![n, rest])?
                }
            };
        }
        Ok(h)
    }

    /// Forward pass on a tape with per-layer `(weights, biases)` variables.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, weights: &[(Var, Var)]) -> Result<Var> {
        if weights.len() != self.layers.len() {
            return Err(Error::Length { expected: self.layers.len(), got: weights.len() });
        }
        let mut h = x;
        let mut k = 0;
        for spec in &self.specs {
            h = match *spec {
                LayerSpec::Linear { .. } => {
                    k += 1;
                    tape.linear(h, weights[k - 1].0, weights[k - 1].1)?
                }
                LayerSpec::Conv { padding, .. } => {
                    k += 1;
                    tape.conv2d(h, weights[k - 1].0, weights[k - 1].1, padding)?
                }
                LayerSpec::Activation { activation } => tape.activation(h, activation)?,
                LayerSpec::MaxPool { size } => tape.maxpool2d(h, size)?,
                LayerSpec::Flatten => tape.flatten(h)?,
            };
        }
        Ok(h)
    }

    /// Output of one weight draw.
    pub fn sample_forward(&self, x: &Tensor, rng: &mut RngState) -> Result<Tensor> {
        let draw = self.draw(rng);
        self.forward_with(x, &draw.weights)
    }
}
