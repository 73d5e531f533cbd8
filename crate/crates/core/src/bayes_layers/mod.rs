//! Bayesian layers: mean-field Gaussian weights bound to a prior family.
//!
//! Every parameterized layer flattens its weights and biases into one
//! vector of length `p_l` (weights first, row-major, then biases). The
//! shrinkage latents of the R2D2 family are indexed the same way.

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{BayesNet, LayerSpec, WeightDraw};

use serde::{Deserialize, Serialize};

use crate::autodiff_nn::{Tape, Tensor, Var};
use crate::distributions::{
    clamp_shrinkage, sample_dirichlet, sample_exponential, sample_gamma, sample_gig, sample_inv_gaussian,
    DirichletParams, GammaParams, GiGParams, InvGaussianParams, RngState, SHRINKAGE_FLOOR,
};
use crate::divergence::{gaussian_kl_term, kl_gamma_gamma, kl_gig_gamma, kl_phi_mc, kl_psi, KlBreakdown};
use crate::error::{Error, Result};
use crate::special_fn::softplus;

/// Number of conditional draws of `phi` behind each Monte-Carlo `kl_phi`.
pub const KL_PHI_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    R2d2,
    Gaussian,
    Horseshoe,
    SpikeSlab,
}

/// Order of the giG draw behind the `phi` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiOrder {
    /// `a_l - p_l / 2`, shared by every coordinate of the layer.
    Layer,
    /// `a_pi - 1/2` per coordinate.
    Coordinate,
}

/// Scale `sigma` entering the shrinkage conditionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GibbsScale {
    /// The current variational `softplus(rho)`.
    Variational,
    /// The fixed prior scale `softplus(rho0_mean)`.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub family: PriorFamily,
    pub a_pi: f64,
    pub b: f64,
    pub rho0_mean: f64,
    pub rho0_sd: f64,
    /// Standard deviation of the initial weight means; 0 starts every mean
    /// at zero. Biases always start at zero.
    pub mu_init_sd: f64,
    pub phi_order: PhiOrder,
    pub gibbs_scale: GibbsScale,
    /// Prior standard deviation of the Gaussian family.
    pub gaussian_sd: f64,
    /// Half-Cauchy scale of the local Horseshoe scales.
    pub horseshoe_local: f64,
    /// Half-Cauchy scale of the global Horseshoe scale.
    pub horseshoe_global: f64,
    pub slab_sd: f64,
    pub spike_sd: f64,
    /// Mixing weight of the slab component.
    pub slab_weight: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            family: PriorFamily::R2d2,
            a_pi: 0.6,
            b: 0.5,
            rho0_mean: -3.0,
            rho0_sd: 0.1,
            mu_init_sd: 0.0,
            phi_order: PhiOrder::Layer,
            gibbs_scale: GibbsScale::Prior,
            gaussian_sd: 1.0,
            horseshoe_local: 1.0,
            horseshoe_global: 1.0,
            slab_sd: 1.0,
            spike_sd: 0.01,
            slab_weight: 0.5,
        }
    }
}

impl PriorConfig {
    pub fn with_family(family: PriorFamily) -> Self {
        PriorConfig { family, ..PriorConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Config(detail));
        if !(self.a_pi > 0.0 && self.a_pi <= 1.0) {
            return bad(format!("a_pi must lie in (0, 1], got {}", self.a_pi));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("b must be positive, got {}", self.b));
        }
        if !self.rho0_mean.is_finite() || !(self.rho0_sd >= 0.0 && self.rho0_sd.is_finite()) {
            return bad(format!("invalid rho0 ({}, {})", self.rho0_mean, self.rho0_sd));
        }
        if !(self.mu_init_sd >= 0.0 && self.mu_init_sd.is_finite()) {
            return bad(format!("mu_init_sd must be non-negative, got {}", self.mu_init_sd));
        }
        for (name, v) in [
            ("gaussian_sd", self.gaussian_sd),
            ("horseshoe_local", self.horseshoe_local),
            ("horseshoe_global", self.horseshoe_global),
            ("slab_sd", self.slab_sd),
            ("spike_sd", self.spike_sd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.slab_weight) {
            return bad(format!("slab_weight must lie in [0, 1], got {}", self.slab_weight));
        }
        Ok(())
    }

    /// Scale entering the prior side of `kl_w` for the R2D2 family.
    pub fn sigma_prior(&self) -> f64 {
        softplus(self.rho0_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalWeights {
    pub mu: Tensor,
    pub rho: Tensor,
    pub mu_bias: Tensor,
    pub rho_bias: Tensor,
}

impl VariationalWeights {
    pub fn num_params(&self) -> usize {
        self.mu.len() + self.mu_bias.len()
    }

    /// Means over the flattened `[weights, biases]` layout.
    pub fn flat_mu(&self) -> Vec<f64> {
        self.mu.data().iter().chain(self.mu_bias.data()).copied().collect()
    }

    /// `softplus(rho)` over the flattened layout.
    pub fn flat_sigma(&self) -> Vec<f64> {
        self.rho.data().iter().chain(self.rho_bias.data()).map(|&r| softplus(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageState {
    pub psi: Tensor,
    pub phi: Tensor,
    pub omega: f64,
    pub xi: f64,
    pub a_l: f64,
    pub b_l: f64,
}

impl ShrinkageState {
    /// Variance multipliers `psi phi omega / 2`.
    pub fn multipliers(&self) -> Vec<f64> {
        self.psi.data().iter().zip(self.phi.data()).map(|(p, f)| p * f * self.omega / 2.0).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let in_band = |v: f64| (SHRINKAGE_FLOOR..=crate::distributions::SHRINKAGE_CEIL).contains(&v);
        if self.psi.len() != self.phi.len() {
            return Err(Error::Length { expected: self.psi.len(), got: self.phi.len() });
        }
        let sum: f64 = self.phi.data().iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain("ShrinkageState", format!("phi sums to {sum}")));
        }
        let all = self.psi.data().iter().chain(self.phi.data()).chain([&self.omega, &self.xi]);
        if let Some(v) = all.copied().find(|&v| !in_band(v)) {
            return Err(Error::domain("ShrinkageState", format!("{v} outside the clamp band")));
        }
        Ok(())
    }
}

/// Fixed prior variances of a Horseshoe layer, `tau^2 g_j^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeScales {
    pub prior_var: Vec<f64>,
}

/// One parameterized layer: variational weights plus whatever latent state
/// its prior family needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesLayer {
    pub weights: VariationalWeights,
    pub shrinkage: Option<ShrinkageState>,
    pub horseshoe: Option<HorseshoeScales>,
}

/// Draws fresh variational parameters for a layer whose weight tensor has
/// `shape` (output axis first; the bias has `shape[0]` entries) and, for the
/// R2D2 family, the shrinkage hierarchy from its prior.
pub fn init_layer(
    shape: &[usize],
    config: &PriorConfig,
    rng: &mut RngState,
) -> Result<(VariationalWeights, Option<ShrinkageState>)> {
    config.validate()?;
    if shape.len() < 2 || shape.contains(&0) {
        return Err(Error::shape("init_layer", format!("invalid weight shape {shape:?}")));
    }
    let n_w: usize = shape.iter().product();
    let n_b = shape[0];
    let mut rho_draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| config.rho0_mean + config.rho0_sd * rng.standard_normal()).collect()
    };
    let rho = Tensor::new(shape.to_vec(), rho_draw(n_w))?;
    let rho_bias = Tensor::vector(rho_draw(n_b));
    let mu = if config.mu_init_sd > 0.0 {
        Tensor::new(shape.to_vec(), (0..n_w).map(|_| config.mu_init_sd * rng.standard_normal()).collect())?
    } else {
        Tensor::zeros(shape)
    };
    let weights = VariationalWeights { mu, rho, mu_bias: Tensor::zeros(&[n_b]), rho_bias };
    let shrinkage = match config.family {
        PriorFamily::R2d2 => Some(init_shrinkage(n_w + n_b, config, rng)?),
        _ => None,
    };
    Ok((weights, shrinkage))
}

fn init_shrinkage(p: usize, config: &PriorConfig, rng: &mut RngState) -> Result<ShrinkageState> {
    let a_l = p as f64 * config.a_pi;
    let b_l = config.b;
    let psi = (0..p).map(|_| sample_exponential(0.5, rng).map(clamp_shrinkage)).collect::<Result<Vec<_>>>()?;
    let phi = if p == 1 { vec![1.0] } else { renormalize(sample_dirichlet(&DirichletParams::symmetric(config.a_pi, p)?, rng)) };
    let xi = clamp_shrinkage(sample_gamma(&GammaParams::new(b_l, 1.0)?, rng));
    let omega = clamp_shrinkage(sample_gamma(&GammaParams::new(a_l, xi)?, rng));
    Ok(ShrinkageState { psi: Tensor::vector(psi), phi: Tensor::vector(phi), omega, xi, a_l, b_l })
}

/// Independent half-Cauchy local scales and one global scale per layer.
pub fn init_horseshoe(p: usize, config: &PriorConfig, rng: &mut RngState) -> HorseshoeScales {
    let mut half_cauchy = |scale: f64| {
        let (a, b) = (rng.standard_normal(), rng.standard_normal());
        scale * (a / b).abs()
    };
    let tau = half_cauchy(config.horseshoe_global);
    let prior_var = (0..p)
        .map(|_| {
            let g = half_cauchy(config.horseshoe_local);
            clamp_shrinkage(tau * tau * g * g)
        })
        .collect();
    HorseshoeScales { prior_var }
}

/// Clamps every entry into the shrinkage band and restores the unit sum.
fn renormalize(mut phi: Vec<f64>) -> Vec<f64> {
    let total: f64 = phi.iter().map(|&v| clamp_shrinkage(v)).sum();
    for v in phi.iter_mut() {
        *v = clamp_shrinkage(clamp_shrinkage(*v) / total);
    }
    phi
}

/// Per-parameter standard-deviation multipliers applied to `softplus(rho)`.
pub fn sd_multipliers(layer: &BayesLayer) -> Vec<f64> {
    match &layer.shrinkage {
        Some(ss) => ss.multipliers().into_iter().map(f64::sqrt).collect(),
        None => vec![1.0; layer.weights.num_params()],
    }
}

/// Standard-normal noise for one reparameterized draw of a layer.
pub fn draw_noise(p: usize, rng: &mut RngState) -> Vec<f64> {
    (0..p).map(|_| rng.standard_normal()).collect()
}

/// `w = mu + sd_mult softplus(rho) eps` for weights and biases. The result
/// is bitwise what the tape's `reparam` node computes from the same noise.
pub fn sample_weights(
    vw: &VariationalWeights,
    ss: Option<&ShrinkageState>,
    rng: &mut RngState,
) -> Result<(Tensor, Tensor)> {
    let p = vw.num_params();
    let mult: Vec<f64> = match ss {
        Some(s) if s.psi.len() != p => return Err(Error::Length { expected: p, got: s.psi.len() }),
        Some(s) => s.multipliers().into_iter().map(f64::sqrt).collect(),
        None => vec![1.0; p],
    };
    let eps = draw_noise(p, rng);
    Ok(apply_noise(vw, &mult, &eps))
}

pub(crate) fn apply_noise(vw: &VariationalWeights, sd_mult: &[f64], eps: &[f64]) -> (Tensor, Tensor) {
    let n_w = vw.mu.len();
    let draw = |mu: &Tensor, rho: &Tensor, off: usize| {
        let data = (0..mu.len())
            .map(|i| {
                let j = off + i;
                let v = sd_mult[j] * softplus(rho.data()[i]);
                assert!(v >= 0.0, "negative weight scale {v}");
                mu.data()[i] + v * eps[j]
            })
            .collect();
        Tensor::new(mu.shape().to_vec(), data).expect("shape preserved")
    };
    (draw(&vw.mu, &vw.rho, 0), draw(&vw.mu_bias, &vw.rho_bias, n_w))
}

/// Mean parameter of the inverse-Gaussian conditional of `1 / psi_j`.
pub fn psi_conditional_mean(sigma: f64, phi: f64, omega: f64, w: f64) -> f64 {
    (sigma * sigma * phi * omega / 2.0).sqrt() / w.abs().max(SHRINKAGE_FLOOR)
}

fn phi_order_value(ss: &ShrinkageState, p: usize, config: &PriorConfig) -> f64 {
    match config.phi_order {
        PhiOrder::Layer => ss.a_l - p as f64 / 2.0,
        PhiOrder::Coordinate => config.a_pi - 0.5,
    }
}

fn gig(chi: f64, rho: f64, lambda0: f64) -> Result<GiGParams> {
    // chi is floored so the conditional stays proper when w underflows
    GiGParams::new(chi.max(SHRINKAGE_FLOOR * SHRINKAGE_FLOOR), rho.max(SHRINKAGE_FLOOR), lambda0)
}

/// Draws `phi` from the normalized giG construction given the other latents.
fn draw_phi(
    ss: &ShrinkageState,
    sigma: &[f64],
    w: &[f64],
    config: &PriorConfig,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    let p = w.len();
    if p == 1 {
        return Ok(vec![1.0]);
    }
    let lambda0 = phi_order_value(ss, p, config);
    let mut t = Vec::with_capacity(p);
    for j in 0..p {
        let wj = w[j].abs().max(SHRINKAGE_FLOOR);
        let chi = 2.0 * wj * wj / (sigma[j] * sigma[j] * ss.psi.data()[j]);
        t.push(sample_gig(&gig(chi, 2.0 * ss.xi, lambda0)?, rng));
    }
    let total: f64 = t.iter().sum();
    Ok(renormalize(t.into_iter().map(|v| v / total).collect()))
}

fn omega_conditional(ss: &ShrinkageState, sigma: &[f64], w: &[f64]) -> Result<GiGParams> {
    let p = w.len();
    let chi: f64 = (0..p)
        .map(|j| {
            let wj = w[j].abs().max(SHRINKAGE_FLOOR);
            2.0 * wj * wj / (sigma[j] * sigma[j] * ss.phi.data()[j] * ss.psi.data()[j])
        })
        .sum();
    gig(chi, 2.0 * ss.xi, ss.a_l - p as f64 / 2.0)
}

/// Conditional `Ga(a_l + b_l, 1 + omega)` of the layer's `xi`.
pub fn xi_conditional(a_l: f64, b_l: f64, omega: f64) -> Result<GammaParams> {
    GammaParams::new(a_l + b_l, 1.0 + omega)
}

/// One Gibbs sweep `psi -> omega -> xi -> phi` given the scales `sigma` and
/// a weight draw `w`, both over the flattened layout.
pub fn gibbs_sweep(
    ss: &ShrinkageState,
    sigma: &[f64],
    w: &[f64],
    config: &PriorConfig,
    rng: &mut RngState,
) -> Result<ShrinkageState> {
    let p = ss.psi.len();
    if sigma.len() != p || w.len() != p {
        return Err(Error::Length { expected: p, got: w.len().min(sigma.len()) });
    }
    let mut next = ss.clone();
    for j in 0..p {
        let mu = psi_conditional_mean(sigma[j], ss.phi.data()[j], ss.omega, w[j]);
        let inv = sample_inv_gaussian(&InvGaussianParams::new(mu, 1.0)?, rng);
        next.psi.data_mut()[j] = clamp_shrinkage(1.0 / inv);
    }
    next.omega = clamp_shrinkage(sample_gig(&omega_conditional(&next, sigma, w)?, rng));
    next.xi = clamp_shrinkage(sample_gamma(&xi_conditional(next.a_l, next.b_l, next.omega)?, rng));
    let phi = draw_phi(&next, sigma, w, config, rng)?;
    next.phi = Tensor::vector(phi);
    Ok(next)
}

/// Scales entering the shrinkage conditionals of a layer.
pub fn conditional_sigma(vw: &VariationalWeights, config: &PriorConfig) -> Vec<f64> {
    match config.gibbs_scale {
        GibbsScale::Variational => vw.flat_sigma(),
        GibbsScale::Prior => vec![config.sigma_prior(); vw.num_params()],
    }
}

/// Gibbs sweep for a layer, using its current `softplus(rho)` as the scales.
pub fn gibbs_update(
    vw: &VariationalWeights,
    ss: &ShrinkageState,
    w_sample: &[f64],
    config: &PriorConfig,
    rng: &mut RngState,
) -> Result<ShrinkageState> {
    gibbs_sweep(ss, &conditional_sigma(vw, config), w_sample, config, rng)
}

/// Mixture components `(weight, q-variance multipliers, prior variances)`
/// of the weight KL over the flattened layout. The KL is their weighted sum.
pub fn kl_w_components(layer: &BayesLayer, config: &PriorConfig) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let p = layer.weights.num_params();
    match config.family {
        PriorFamily::R2d2 => {
            let mult = match &layer.shrinkage {
                Some(ss) => ss.multipliers(),
                None => vec![1.0; p],
            };
            let s2 = config.sigma_prior().powi(2);
            let pv = mult.iter().map(|m| m * s2).collect();
            vec![(1.0, mult, pv)]
        }
        PriorFamily::Gaussian => vec![(1.0, vec![1.0; p], vec![config.gaussian_sd.powi(2); p])],
        PriorFamily::Horseshoe => {
            let pv = match &layer.horseshoe {
                Some(h) => h.prior_var.clone(),
                None => vec![1.0; p],
            };
            vec![(1.0, vec![1.0; p], pv)]
        }
        PriorFamily::SpikeSlab => vec![
            (config.slab_weight, vec![1.0; p], vec![config.slab_sd.powi(2); p]),
            (1.0 - config.slab_weight, vec![1.0; p], vec![config.spike_sd.powi(2); p]),
        ],
    }
}

/// Differentiable weight KL of a layer whose parameters sit on `tape`.
pub fn kl_w_on_tape(
    tape: &mut Tape,
    params: [Var; 4],
    layer: &BayesLayer,
    config: &PriorConfig,
) -> Result<Option<Var>> {
    let n_w = layer.weights.mu.len();
    let [mu, rho, mu_b, rho_b] = params;
    let mut acc: Option<Var> = None;
    for (weight, mult, pv) in kl_w_components(layer, config) {
        if weight == 0.0 {
            continue;
        }
        let kw = tape.gaussian_kl(mu, rho, mult[..n_w].to_vec(), pv[..n_w].to_vec())?;
        let kb = tape.gaussian_kl(mu_b, rho_b, mult[n_w..].to_vec(), pv[n_w..].to_vec())?;
        let mut term = tape.add(kw, kb)?;
        if weight != 1.0 {
            term = tape.scale(term, weight)?;
        }
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc)
}

fn kl_w_value(layer: &BayesLayer, config: &PriorConfig) -> f64 {
    let mu = layer.weights.flat_mu();
    let sigma = layer.weights.flat_sigma();
    kl_w_components(layer, config)
        .into_iter()
        .map(|(weight, mult, pv)| {
            let s: f64 = (0..mu.len()).map(|j| gaussian_kl_term(mu[j], mult[j] * sigma[j] * sigma[j], 0.0, pv[j])).sum();
            weight * s
        })
        .sum()
}

/// Full KL breakdown of a layer. For the R2D2 family the latent terms use
/// the Gibbs conditionals evaluated at the variational means; `kl_phi` is a
/// Monte-Carlo estimate from [`KL_PHI_SAMPLES`] conditional draws.
pub fn layer_kl(layer: &BayesLayer, config: &PriorConfig, rng: &mut RngState) -> Result<KlBreakdown> {
    let kl_w = kl_w_value(layer, config);
    let ss = match (&layer.shrinkage, config.family) {
        (Some(ss), PriorFamily::R2d2) => ss,
        _ => return Ok(KlBreakdown::weights_only(kl_w)),
    };
    let mu = layer.weights.flat_mu();
    let sigma = conditional_sigma(&layer.weights, config);
    let p = mu.len();

    let kl_xi = kl_gamma_gamma(&xi_conditional(ss.a_l, ss.b_l, ss.omega)?, &GammaParams::new(ss.b_l, 1.0)?);
    let kl_omega = kl_gig_gamma(&omega_conditional(ss, &sigma, &mu)?, &GammaParams::new(ss.a_l, ss.xi)?)?;
    let mut kl_psi_sum = 0.0;
    for j in 0..p {
        kl_psi_sum += kl_psi(psi_conditional_mean(sigma[j], ss.phi.data()[j], ss.omega, mu[j]), 0.5)?;
    }
    let kl_phi = if p == 1 {
        0.0
    } else {
        let samples = (0..KL_PHI_SAMPLES).map(|_| draw_phi(ss, &sigma, &mu, config, rng)).collect::<Result<Vec<_>>>()?;
        kl_phi_mc(&samples, &DirichletParams::symmetric(config.a_pi, p)?)?
    };
    Ok(KlBreakdown::new(kl_xi, kl_omega, kl_psi_sum, kl_phi, kl_w))
}
