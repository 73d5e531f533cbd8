//! Sampling baselines: SGLD with a decaying step size, and HMC used as the
//! oracle posterior for small models.

use serde::{Deserialize, Serialize};

use super::{nll_scale, Dataset, PosteriorSamples};
use crate::autodiff_nn::{LossKind, Tape, Var};
use crate::bayes_layers::{gibbs_sweep, BayesNet, PriorFamily};
use crate::distributions::RngState;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest parameter count accepted by [`hmc_oracle`].
pub const HMC_MAX_PARAMS: usize = 2000;

/// Log prior density of a flat parameter vector and its gradient, given
/// the current latent state of each layer. R2D2 layers use the conditional
/// Gaussian `N(0, psi phi omega sigma_prior^2 / 2)`.
pub fn log_prior(net: &BayesNet, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    if theta.len() != net.num_params() {
        return Err(Error::Length { expected: net.num_params(), got: theta.len() });
    }
    let prior = &net.prior;
    let normal = |x: f64, v: f64| (-0.5 * (LN_2PI + v.ln()) - x * x / (2.0 * v), -x / v);
    let mut lp = 0.0;
    let mut grad = Vec::with_capacity(theta.len());
    let mut off = 0;
    for layer in &net.layers {
        let p = layer.weights.num_params();
        let var: Option<Vec<f64>> = match prior.family {
            PriorFamily::R2d2 => {
                let s2 = prior.sigma_prior().powi(2);
                Some(match &layer.shrinkage {
                    Some(ss) => ss.multipliers().into_iter().map(|m| m * s2).collect(),
                    None => vec![s2; p],
                })
            }
            PriorFamily::Gaussian => Some(vec![prior.gaussian_sd.powi(2); p]),
            PriorFamily::Horseshoe => Some(match &layer.horseshoe {
                Some(h) => h.prior_var.clone(),
                None => vec![1.0; p],
            }),
            PriorFamily::SpikeSlab => None,
        };
        for j in 0..p {
            let x = theta[off + j];
            let (l, g) = match &var {
                Some(v) => normal(x, v[j]),
                None => {
                    let (l1, g1) = normal(x, prior.slab_sd.powi(2));
                    let (l0, g0) = normal(x, prior.spike_sd.powi(2));
                    let a = prior.slab_weight.ln() + l1;
                    let b = (1.0 - prior.slab_weight).ln() + l0;
                    let m = a.max(b);
                    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
                    let r1 = (a - lse).exp();
                    (lse, r1 * g1 + (1.0 - r1) * g0)
                }
            };
            lp += l;
            grad.push(g);
        }
        off += p;
    }
    Ok((lp, grad))
}

/// One Gibbs sweep of every R2D2 layer's latents given the point weights,
/// with `sigma_prior` standing in for the variational scales.
pub fn resample_latents(net: &mut BayesNet, theta: &[f64], rngs: &mut [RngState]) -> Result<()> {
    if net.prior.family != PriorFamily::R2d2 {
        return Ok(());
    }
    let prior = net.prior.clone();
    let s = prior.sigma_prior();
    let mut off = 0;
    for (layer, rng) in net.layers.iter_mut().zip(rngs.iter_mut()) {
        let p = layer.weights.num_params();
        if let Some(ss) = &layer.shrinkage {
            layer.shrinkage = Some(gibbs_sweep(ss, &vec![s; p], &theta[off..off + p], &prior, rng)?);
        }
        off += p;
    }
    Ok(())
}

/// Data term of the potential, `(n / |B|) * sum_i nll_i`, and its gradient.
fn data_potential(net: &BayesNet, theta: &[f64], batch: &Dataset, n_total: usize, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    let parts = net.unflatten(theta)?;
    let mut tape = Tape::new();
    let vars: Vec<(Var, Var)> = parts.into_iter().map(|(w, b)| (tape.param(w), tape.param(b))).collect();
    let x = tape.constant(batch.x.clone());
    let out = net.forward_tape(&mut tape, x, &vars)?;
    let mean = tape.loss(out, batch.y.clone(), loss)?;
    let scale = n_total as f64 * nll_scale(loss, batch);
    let total = tape.scale(mean, scale)?;
    let u = tape.value(total)?.item()?;
    let grads = tape.backward(total)?;
    let mut g = Vec::with_capacity(theta.len());
    for (w, b) in vars {
        g.extend_from_slice(grads.get(w).ok_or(Error::Detached(w.index()))?.data());
        g.extend_from_slice(grads.get(b).ok_or(Error::Detached(b.index()))?.data());
    }
    Ok((u, g))
}

/// Potential `U = data term - log prior` and its gradient.
fn potential(net: &BayesNet, theta: &[f64], batch: &Dataset, n_total: usize, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    let (u, mut g) = data_potential(net, theta, batch, n_total, loss)?;
    let (lp, gp) = log_prior(net, theta)?;
    for (a, b) in g.iter_mut().zip(gp) {
        *a -= b;
    }
    Ok((u - lp, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgldConfig {
    /// Step size at `t = 0` is `step_size * step_offset^-step_decay`.
    pub step_size: f64,
    pub step_offset: f64,
    pub step_decay: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub num_samples: usize,
    pub batch_size: usize,
    pub inject_noise: bool,
    pub loss: LossKind,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            step_size: 3e-4,
            step_offset: 1.0,
            step_decay: 0.25,
            burn_in: 10_000,
            thin: 10,
            num_samples: 100,
            batch_size: 128,
            inject_noise: true,
            loss: LossKind::Mse,
        }
    }
}

impl SgldConfig {
    pub fn epsilon(&self, t: usize) -> f64 {
        self.step_size * (self.step_offset + t as f64).powf(-self.step_decay)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_offset > 0.0 && self.step_decay >= 0.0) {
            return Err(Error::Config("SGLD step schedule must be positive".into()));
        }
        if self.thin == 0 || self.num_samples == 0 || self.batch_size == 0 {
            return Err(Error::Config("SGLD thin, num_samples and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generic SGLD: `theta <- theta - (eps_t / 2) grad U + N(0, eps_t)`.
/// `grad_u` may use its rng for minibatching. Aborts once `|theta|_inf`
/// exceeds `1e6`.
pub fn sgld_chain<F>(theta0: &[f64], config: &SgldConfig, mut grad_u: F, rng: &mut RngState) -> Result<PosteriorSamples>
where
    F: FnMut(&[f64], &mut RngState) -> Result<Vec<f64>>,
{
    config.validate()?;
    let mut theta = theta0.to_vec();
    let mut noise = rng.fork(1);
    let mut samples = Vec::with_capacity(config.num_samples);
    let total = config.burn_in + config.num_samples * config.thin;
    for t in 0..total {
        let eps = config.epsilon(t);
        let g = grad_u(&theta, rng)?;
        let sd = eps.sqrt();
        for (th, gi) in theta.iter_mut().zip(&g) {
            *th -= 0.5 * eps * gi;
            if config.inject_noise {
                *th += sd * noise.standard_normal();
            }
        }
        let max = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(max <= 1e6) {
            return Err(Error::Diverged(format!("SGLD step {t}: |theta|_inf = {max:e}")));
        }
        if t >= config.burn_in && (t - config.burn_in + 1) % config.thin == 0 {
            samples.push(theta.clone());
        }
    }
    PosteriorSamples::new(samples)
}

/// SGLD on the network's point weights, starting from one draw of the
/// variational initialization. R2D2 latents are Gibbs-resampled after every
/// step. Returns the network with its latents at their final state.
pub fn train_sgld(net: &BayesNet, data: &Dataset, config: &SgldConfig, rng: &RngState) -> Result<(BayesNet, PosteriorSamples)> {
    let mut net = net.clone();
    let mut init = rng.fork(0);
    let theta0: Vec<f64> =
        net.draw(&mut init).weights.iter().flat_map(|(w, b)| w.data().iter().chain(b.data()).copied()).collect();
    let mut gibbs: Vec<RngState> = (0..net.layers.len()).map(|l| rng.fork(100 + l as u64)).collect();
    let mut chain_rng = rng.fork(1);
    let n = data.len();
    let bs = config.batch_size.min(n);
    let loss = config.loss;
    let samples = {
        let net = &mut net;
        sgld_chain(
            &theta0,
            config,
            |theta, r| {
                let idx: Vec<usize> = (0..bs).map(|_| r.below(n)).collect();
                let (_, g) = potential(net, theta, &data.subset(&idx), n, loss)?;
                resample_latents(net, theta, &mut gibbs)?;
                Ok(g)
            },
            &mut chain_rng,
        )?
    };
    Ok((net, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub num_samples: usize,
    pub warmup: usize,
    pub leapfrog_steps: usize,
    /// Initial step size; adapted during warm-up.
    pub step_size: f64,
    pub target_accept: f64,
    /// Post-warm-up acceptance below this aborts the chain.
    pub min_accept: f64,
    /// With `false` every proposal is accepted (the ratio is still recorded).
    pub metropolis: bool,
    pub adapt: bool,
    pub loss: LossKind,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            num_samples: 1000,
            warmup: 500,
            leapfrog_steps: 20,
            step_size: 1e-2,
            target_accept: 0.75,
            min_accept: 0.1,
            metropolis: true,
            adapt: true,
            loss: LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcStats {
    /// Mean of `min(1, exp(-dH))` over post-warm-up trajectories.
    pub acceptance_rate: f64,
    pub step_size: f64,
    /// Extremes of the raw ratio `exp(-dH)` over post-warm-up trajectories.
    pub min_ratio: f64,
    pub max_ratio: f64,
}

pub fn hamiltonian(u: f64, momentum: &[f64]) -> f64 {
    u + 0.5 * momentum.iter().map(|p| p * p).sum::<f64>()
}

/// `steps` leapfrog steps of size `eps` with unit mass. Returns the end
/// point, its momentum and its potential.
pub fn leapfrog<F>(theta: &[f64], momentum: &[f64], eps: f64, steps: usize, potential: &mut F) -> Result<(Vec<f64>, Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut q = theta.to_vec();
    let mut p = momentum.to_vec();
    let (_, mut g) = potential(&q)?;
    let mut u = f64::NAN;
    for s in 0..steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= 0.5 * eps * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += eps * pi;
        }
        let (u_new, g_new) = potential(&q)?;
        u = u_new;
        g = g_new;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= 0.5 * eps * gi;
        }
        if !u.is_finite() {
            debug_assert!(s < steps);
            break;
        }
    }
    if steps == 0 {
        u = potential(&q)?.0;
    }
    Ok((q, p, u))
}

/// HMC with identity mass. During warm-up the log step size follows a
/// Robbins–Monro recursion toward `target_accept` and is then frozen at the
/// average of its second half. `gibbs` runs between trajectories.
pub fn hmc_chain<F, G>(
    theta0: &[f64],
    config: &HmcConfig,
    mut potential: F,
    mut gibbs: G,
    rng: &mut RngState,
) -> Result<(PosteriorSamples, HmcStats)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    G: FnMut(&[f64], &mut RngState) -> Result<()>,
{
    if config.num_samples == 0 || config.leapfrog_steps == 0 || !(config.step_size > 0.0) {
        return Err(Error::Config("HMC needs samples, leapfrog steps and a positive step size".into()));
    }
    let mut theta = theta0.to_vec();
    let mut log_eps = config.step_size.ln();
    let mut log_eps_sum = 0.0f64;
    let mut sum_count = 0usize;
    let mut samples = Vec::with_capacity(config.num_samples);
    let (mut accepted, mut min_ratio, mut max_ratio) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    let mut latent_rng = rng.fork(7);
    for it in 0..config.warmup + config.num_samples {
        let warm = it < config.warmup;
        if it == config.warmup && sum_count > 0 {
            log_eps = log_eps_sum / sum_count as f64;
        }
        let eps = log_eps.exp();
        let (u0, _) = potential(&theta)?;
        let p0: Vec<f64> = (0..theta.len()).map(|_| rng.standard_normal()).collect();
        let (q, p, u1) = leapfrog(&theta, &p0, eps, config.leapfrog_steps, &mut potential)?;
        let dh = hamiltonian(u1, &p) - hamiltonian(u0, &p0);
        let ratio = if dh.is_finite() { (-dh).exp() } else { 0.0 };
        let alpha = ratio.min(1.0);
        let accept = if config.metropolis { rng.uniform() < alpha } else { dh.is_finite() };
        if accept {
            theta = q;
        }
        if warm && config.adapt {
            let rate = 1.0 / (it as f64 + 10.0).powf(0.6);
            log_eps += 2.0 * rate * (alpha - config.target_accept);
            if it >= config.warmup / 2 {
                log_eps_sum += log_eps;
                sum_count += 1;
            }
        }
        if !warm {
            accepted += alpha;
            min_ratio = min_ratio.min(ratio);
            max_ratio = max_ratio.max(ratio);
            samples.push(theta.clone());
        }
        gibbs(&theta, &mut latent_rng)?;
    }
    let rate = accepted / config.num_samples as f64;
    let step_size = log_eps.exp();
    if config.metropolis && rate < config.min_accept {
        return Err(Error::LowAcceptance { rate, step_size });
    }
    Ok((PosteriorSamples::new(samples)?, HmcStats { acceptance_rate: rate, step_size, min_ratio, max_ratio }))
}

/// Full-batch HMC on the network's point weights, used as the reference
/// posterior. R2D2 layers alternate trajectories with exact Gibbs sweeps of
/// their latents.
pub fn hmc_oracle(net: &BayesNet, data: &Dataset, config: &HmcConfig, rng: &RngState) -> Result<(PosteriorSamples, HmcStats)> {
    if net.num_params() > HMC_MAX_PARAMS {
        return Err(Error::Config(format!("HMC oracle limited to {HMC_MAX_PARAMS} parameters, got {}", net.num_params())));
    }
    let mut model = net.clone();
    let mut init = rng.fork(0);
    let theta0: Vec<f64> =
        model.draw(&mut init).weights.iter().flat_map(|(w, b)| w.data().iter().chain(b.data()).copied()).collect();
    let mut gibbs_rngs: Vec<RngState> = (0..model.layers.len()).map(|l| rng.fork(100 + l as u64)).collect();
    let mut chain_rng = rng.fork(1);
    let n = data.len();
    let loss = config.loss;
    let cell = std::cell::RefCell::new(&mut model);
    hmc_chain(
        &theta0,
        config,
        |theta| potential(&cell.borrow(), theta, data, n, loss),
        |theta, _| resample_latents(&mut cell.borrow_mut(), theta, &mut gibbs_rngs),
        &mut chain_rng,
    )
}
