//! Training engines: stochastic variational Gibbs inference (SVGI), plain
//! mean-field SVI, SGLD, and an HMC oracle for small models.

mod mcmc;

pub use mcmc::{
    hamiltonian, hmc_chain, hmc_oracle, leapfrog, log_prior, resample_latents, sgld_chain, train_sgld, HmcConfig,
    HmcStats, SgldConfig, HMC_MAX_PARAMS,
};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff_nn::{kernels, Activation, Adam, LossKind, Tape, Tensor, Var};
use crate::bayes_layers::{gibbs_update, kl_w_on_tape, layer_kl, BayesNet, PriorFamily};
use crate::distributions::RngState;
use crate::divergence::KlBreakdown;
use crate::error::{Error, Result};

/// Inputs with one row per example along axis 0, and targets as a matrix
/// with one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl Dataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.ndim() == 0 || y.ndim() != 2 || x.shape()[0] != y.shape()[0] {
            return Err(Error::shape("Dataset::new", format!("x {:?} vs y {:?}", x.shape(), y.shape())));
        }
        if x.shape()[0] == 0 {
            return Err(Error::Empty("Dataset::new"));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { x: self.x.gather_rows(idx), y: self.y.gather_rows(idx) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    /// Stop once the epoch training objective has not improved for
    /// `early_stop_patience` epochs.
    TrainingLoss,
    Off,
}

/// Weights the Gibbs sweep conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GibbsInput {
    /// The reparameterized draw used in the step's first forward pass.
    Sample,
    /// The variational means after the optimizer step.
    Mean,
    /// `mu + sigma * eps` after the optimizer step, reusing the step's first
    /// noise draw without the shrinkage multipliers.
    Unscaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub kl_anneal: f64,
    pub early_stop_patience: usize,
    pub early_stop: EarlyStop,
    pub mc_train_samples: usize,
    pub mc_eval_samples: usize,
    pub seed: u64,
    /// Optimizer steps between Gibbs sweeps; `None` disables them.
    pub gibbs_every: Option<usize>,
    pub gibbs_input: GibbsInput,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr: 1e-2,
            weight_decay: 5e-4,
            kl_anneal: 1e-3,
            early_stop_patience: 5,
            early_stop: EarlyStop::TrainingLoss,
            mc_train_samples: 1,
            mc_eval_samples: 100,
            seed: 0,
            gibbs_every: Some(1),
            gibbs_input: GibbsInput::Unscaled,
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("early_stop_patience", self.early_stop_patience),
            ("mc_train_samples", self.mc_train_samples),
            ("mc_eval_samples", self.mc_eval_samples),
            ("gibbs_every", self.gibbs_every.unwrap_or(1)),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.kl_anneal > 0.0 && self.kl_anneal <= 1.0) {
            return Err(Error::Config(format!("kl_anneal must lie in (0, 1], got {}", self.kl_anneal)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if let LossKind::GaussianNll { variance } = self.loss {
            if !(variance > 0.0 && variance.is_finite()) {
                return Err(Error::Config(format!("gaussian_nll variance must be positive, got {variance}")));
            }
        }
        Ok(())
    }
}

/// Per-epoch summary. `nll` is summed over the training set (one weight
/// draw per step) and `elbo = -(nll + kl_anneal * kl.total)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    pub epoch: usize,
    pub nll: f64,
    pub kl: KlBreakdown,
    pub elbo: f64,
    /// Mean per-step objective the optimizer saw.
    pub train_loss: f64,
}

/// Appends one JSON object per report to `path`.
pub fn append_jsonl(path: &Path, reports: &[ElboReport]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in reports {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Trains with Gibbs sweeps over the R2D2 latents after every
/// `gibbs_every` optimizer steps.
pub fn train_svgi(
    net: &BayesNet,
    data: &Dataset,
    config: &TrainConfig,
    rng: &RngState,
) -> Result<(BayesNet, Vec<ElboReport>)> {
    if net.prior.family != PriorFamily::R2d2 || net.layers.iter().any(|l| l.shrinkage.is_none()) {
        return Err(Error::Config("SVGI needs every layer to carry R2D2 shrinkage state".into()));
    }
    if config.gibbs_every.is_none() {
        return Err(Error::Config("SVGI needs gibbs_every to be set".into()));
    }
    train_variational(net, data, config, rng)
}

/// Mean-field SVI: the same loop without Gibbs sweeps. Shrinkage latents,
/// if any, stay at their initial values.
pub fn train_svi(
    net: &BayesNet,
    data: &Dataset,
    config: &TrainConfig,
    rng: &RngState,
) -> Result<(BayesNet, Vec<ElboReport>)> {
    let config = TrainConfig { gibbs_every: None, ..config.clone() };
    train_variational(net, data, &config, rng)
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_KL: u64 = 3;
const STREAM_GIBBS: u64 = 1000;

struct StepOutcome {
    objective: f64,
    mean_nll: f64,
    draws: Vec<Vec<f64>>,
    eps: Vec<Vec<f64>>,
}

fn train_variational(
    net: &BayesNet,
    data: &Dataset,
    config: &TrainConfig,
    rng: &RngState,
) -> Result<(BayesNet, Vec<ElboReport>)> {
    config.validate()?;
    let mut net = net.clone();
    if config.epochs == 0 {
        return Ok((net, Vec::new()));
    }
    let n = data.len();
    let mut shuffle_rng = rng.fork(STREAM_SHUFFLE);
    let mut noise_rng = rng.fork(STREAM_NOISE);
    let mut kl_rng = rng.fork(STREAM_KL);
    let mut gibbs_rngs: Vec<RngState> = (0..net.layers.len()).map(|l| rng.fork(STREAM_GIBBS + l as u64)).collect();
    // weight decay applies to the means only; the scales are left alone
    let mut adam_mu = Adam::new(config.lr, config.weight_decay);
    let mut adam_rho = Adam::new(config.lr, 0.0);

    let mut reports = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut nll_sum = 0.0;
        let mut objective_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.subset(chunk);
            let out = optimizer_step(&mut net, &batch, n, config, &mut noise_rng, &mut adam_mu, &mut adam_rho)?;
            step += 1;
            if !out.objective.is_finite() {
                return Err(non_finite_error(&net, epoch, step));
            }
            nll_sum += out.mean_nll * chunk.len() as f64 * nll_scale(config.loss, &batch);
            objective_sum += out.objective;
            batches += 1;
            if let Some(every) = config.gibbs_every {
                if step % every == 0 {
                    let draws = match config.gibbs_input {
                        GibbsInput::Sample => out.draws,
                        GibbsInput::Mean => net.layers.iter().map(|l| l.weights.flat_mu()).collect(),
                        GibbsInput::Unscaled => net
                            .layers
                            .iter()
                            .zip(&out.eps)
                            .map(|(l, e)| {
                                let (mu, sigma) = (l.weights.flat_mu(), l.weights.flat_sigma());
                                mu.iter().zip(&sigma).zip(e).map(|((m, s), e)| m + s * e).collect()
                            })
                            .collect(),
                    };
                    gibbs_all(&mut net, &draws, &mut gibbs_rngs)?;
                }
            }
        }
        let mut kl = KlBreakdown::default();
        for layer in &net.layers {
            kl = kl.combine(&layer_kl(layer, &net.prior, &mut kl_rng)?);
        }
        let train_loss = objective_sum / batches as f64;
        reports.push(ElboReport {
            epoch,
            nll: nll_sum,
            kl,
            elbo: -(nll_sum + config.kl_anneal * kl.total),
            train_loss,
        });
        if config.early_stop == EarlyStop::TrainingLoss {
            if train_loss < best {
                best = train_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.early_stop_patience {
                    break;
                }
            }
        }
    }
    Ok((net, reports))
}

/// Factor turning a mean-reduced batch loss into a per-example value.
pub(crate) fn nll_scale(kind: LossKind, batch: &Dataset) -> f64 {
    match kind {
        LossKind::CrossEntropy => 1.0,
        _ => batch.y.shape()[1] as f64,
    }
}

fn optimizer_step(
    net: &mut BayesNet,
    batch: &Dataset,
    n_train: usize,
    config: &TrainConfig,
    noise_rng: &mut RngState,
    adam_mu: &mut Adam,
    adam_rho: &mut Adam,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let params: Vec<[Var; 4]> = net
        .layers
        .iter()
        .map(|l| {
            let w = &l.weights;
            [
                tape.param(w.mu.clone()),
                tape.param(w.rho.clone()),
                tape.param(w.mu_bias.clone()),
                tape.param(w.rho_bias.clone()),
            ]
        })
        .collect();
    let x = tape.constant(batch.x.clone());
    let mut nll_acc: Option<Var> = None;
    let mut first_draw: Vec<(Var, Var)> = Vec::new();
    let mut first_eps: Vec<Vec<f64>> = Vec::new();
    for s in 0..config.mc_train_samples {
        let draw = net.draw(noise_rng);
        let mut wb = Vec::with_capacity(net.layers.len());
        for (l, p) in params.iter().enumerate() {
            let n_w = net.layers[l].weights.mu.len();
            let (eps, mult) = (&draw.eps[l], &draw.sd_mult[l]);
            let w = tape.reparam(p[0], p[1], eps[..n_w].to_vec(), mult[..n_w].to_vec())?;
            let b = tape.reparam(p[2], p[3], eps[n_w..].to_vec(), mult[n_w..].to_vec())?;
            wb.push((w, b));
        }
        let out = net.forward_tape(&mut tape, x, &wb)?;
        let nll = tape.loss(out, batch.y.clone(), config.loss)?;
        nll_acc = Some(match nll_acc {
            Some(a) => tape.add(a, nll)?,
            None => nll,
        });
        if s == 0 {
            first_draw = wb;
            first_eps = draw.eps;
        }
    }
    let nll_sum = nll_acc.expect("mc_train_samples >= 1");
    let mean_nll = tape.scale(nll_sum, 1.0 / config.mc_train_samples as f64)?;
    let mut objective = mean_nll;
    for (l, p) in params.iter().enumerate() {
        if let Some(kl) = kl_w_on_tape(&mut tape, *p, &net.layers[l], &net.prior)? {
            let scaled = tape.scale(kl, config.kl_anneal / n_train as f64)?;
            objective = tape.add(objective, scaled)?;
        }
    }
    let objective_value = tape.value(objective)?.item()?;
    let mean_nll_value = tape.value(mean_nll)?.item()?;
    let draws: Vec<Vec<f64>> = first_draw
        .iter()
        .map(|(w, b)| -> Result<Vec<f64>> {
            Ok(tape.value(*w)?.data().iter().chain(tape.value(*b)?.data()).copied().collect())
        })
        .collect::<Result<_>>()?;
    if !objective_value.is_finite() {
        return Ok(StepOutcome { objective: objective_value, mean_nll: mean_nll_value, draws, eps: first_eps });
    }
    let grads = tape.backward(objective)?;
    let missing = || Error::Detached(0);
    let mut g_mu = Vec::new();
    let mut g_rho = Vec::new();
    for p in &params {
        g_mu.push(grads.get(p[0]).ok_or_else(missing)?);
        g_mu.push(grads.get(p[2]).ok_or_else(missing)?);
        g_rho.push(grads.get(p[1]).ok_or_else(missing)?);
        g_rho.push(grads.get(p[3]).ok_or_else(missing)?);
    }
    let mut mus: Vec<&mut Tensor> = Vec::new();
    let mut rhos: Vec<&mut Tensor> = Vec::new();
    for l in net.layers.iter_mut() {
        let w = &mut l.weights;
        mus.push(&mut w.mu);
        mus.push(&mut w.mu_bias);
        rhos.push(&mut w.rho);
        rhos.push(&mut w.rho_bias);
    }
    adam_mu.step(&mut mus, &g_mu)?;
    adam_rho.step(&mut rhos, &g_rho)?;
    Ok(StepOutcome { objective: objective_value, mean_nll: mean_nll_value, draws, eps: first_eps })
}

fn gibbs_all(net: &mut BayesNet, draws: &[Vec<f64>], rngs: &mut [RngState]) -> Result<()> {
    let prior = net.prior.clone();
    for ((layer, w), rng) in net.layers.iter_mut().zip(draws).zip(rngs.iter_mut()) {
        if let Some(ss) = &layer.shrinkage {
            layer.shrinkage = Some(gibbs_update(&layer.weights, ss, w, &prior, rng)?);
        }
    }
    Ok(())
}

/// Diagnostic for a non-finite objective: names the layer whose shrinkage
/// state has the most extreme variance multiplier.
pub(crate) fn non_finite_error(net: &BayesNet, epoch: usize, step: usize) -> Error {
    let mut worst = (0, String::from("no shrinkage state"), f64::NEG_INFINITY);
    for (i, l) in net.layers.iter().enumerate() {
        if let Some(ss) = &l.shrinkage {
            let m = ss.multipliers();
            let hi = m.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.abs().ln()));
            let lo = m.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let extreme = hi.max(-lo.ln());
            if extreme > worst.2 || extreme.is_nan() {
                let summary = format!(
                    "omega={:e} xi={:e} a_l={} b_l={} psi=[{:e}, {:e}] phi=[{:e}, {:e}] multiplier=[{:e}, {:e}]",
                    ss.omega,
                    ss.xi,
                    ss.a_l,
                    ss.b_l,
                    min_of(ss.psi.data()),
                    max_of(ss.psi.data()),
                    min_of(ss.phi.data()),
                    max_of(ss.phi.data()),
                    lo,
                    max_of(&m),
                );
                worst = (i, summary, if extreme.is_nan() { f64::INFINITY } else { extreme });
            }
        }
    }
    Error::NonFiniteLoss { epoch, step, layer: worst.0, state: worst.1 }
}

fn min_of(xs: &[f64]) -> f64 {
    xs.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Monte-Carlo predictive summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Tensor,
    /// Across-draw variance (divisor `S`) per output entry.
    pub variance: Tensor,
    pub samples: Vec<Tensor>,
}

impl Prediction {
    fn from_samples(samples: Vec<Tensor>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("Prediction"))?;
        let s = samples.len() as f64;
        let mut mean = vec![0.0; first.len()];
        for t in &samples {
            for (m, v) in mean.iter_mut().zip(t.data()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= s);
        let mut var = vec![0.0; first.len()];
        for t in &samples {
            for ((acc, v), m) in var.iter_mut().zip(t.data()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= s);
        let shape = first.shape().to_vec();
        Ok(Prediction { mean: Tensor::new(shape.clone(), mean)?, variance: Tensor::new(shape, var)?, samples })
    }

    /// Mean of the per-entry predictive standard deviations.
    pub fn mean_sd(&self) -> f64 {
        self.variance.data().iter().map(|v| v.sqrt()).sum::<f64>() / self.variance.len() as f64
    }
}

/// Averages `mc_eval_samples` weight draws. Draw `i` uses `rng.fork(i)`, so
/// the result does not depend on how draws are scheduled across threads.
pub fn predict(net: &BayesNet, x: &Tensor, mc_eval_samples: usize, rng: &RngState) -> Result<Prediction> {
    predict_with(net, x, mc_eval_samples, rng, None)
}

/// As [`predict`], with the activation applied to each draw's output before
/// averaging (softmax for class probabilities).
pub fn predict_with(
    net: &BayesNet,
    x: &Tensor,
    mc_eval_samples: usize,
    rng: &RngState,
    output: Option<Activation>,
) -> Result<Prediction> {
    if mc_eval_samples == 0 {
        return Err(Error::Empty("predict"));
    }
    let samples = (0..mc_eval_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let out = net.sample_forward(x, &mut r)?;
            Ok(match output {
                Some(a) => kernels::activation(&out, a),
                None => out,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Prediction::from_samples(samples)
}

/// Predictions from explicit flat parameter vectors (SGLD or HMC draws).
pub fn predict_samples(
    net: &BayesNet,
    x: &Tensor,
    samples: &PosteriorSamples,
    output: Option<Activation>,
) -> Result<Prediction> {
    let outs = samples
        .samples
        .par_iter()
        .map(|theta| {
            let out = net.forward_with(x, &net.unflatten(theta)?)?;
            Ok(match output {
                Some(a) => kernels::activation(&out, a),
                None => out,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Prediction::from_samples(outs)
}

/// Full parameter vectors in the network's flat layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub samples: Vec<Vec<f64>>,
}

impl PosteriorSamples {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let d = samples.first().ok_or(Error::Empty("PosteriorSamples"))?.len();
        if let Some(bad) = samples.iter().find(|s| s.len() != d) {
            return Err(Error::Length { expected: d, got: bad.len() });
        }
        Ok(PosteriorSamples { samples })
    }

    /// Repeated reparameterized draws from a variational posterior.
    pub fn from_variational(net: &BayesNet, count: usize, rng: &RngState) -> Result<Self> {
        let mut r = rng.clone();
        let samples = (0..count)
            .map(|_| net.draw(&mut r).weights.iter().flat_map(|(w, b)| w.data().iter().chain(b.data()).copied()).collect())
            .collect();
        PosteriorSamples::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for s in &self.samples {
            for (a, v) in m.iter_mut().zip(s) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// `||learned - oracle||_2` between two posterior mean vectors.
pub fn inference_error(learned_mean: &[f64], oracle_mean: &[f64]) -> Result<f64> {
    if learned_mean.len() != oracle_mean.len() {
        return Err(Error::Length { expected: oracle_mean.len(), got: learned_mean.len() });
    }
    Ok(learned_mean.iter().zip(oracle_mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}
