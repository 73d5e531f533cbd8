//! Kullback–Leibler divergences for every term of the variational objective.
//!
//! All functions return `KL(q || p)` in nats.

use serde::{Deserialize, Serialize};

use crate::distributions::{gig_moments, DirichletParams, GammaParams, GiGParams, SHRINKAGE_FLOOR};
use crate::error::{Error, Result};
use crate::special_fn::{digamma_unchecked, log_bessel_k, log_gamma_unchecked, scaled_exp_e1, BesselOrder};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-symbol KL decomposition. `total` is always the left-to-right sum
/// `xi + omega + psi + phi + w`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KlBreakdown {
    pub kl_xi: f64,
    pub kl_omega: f64,
    pub kl_psi: f64,
    pub kl_phi: f64,
    pub kl_w: f64,
    pub total: f64,
}

impl KlBreakdown {
    pub fn new(kl_xi: f64, kl_omega: f64, kl_psi: f64, kl_phi: f64, kl_w: f64) -> Self {
        let total = kl_xi + kl_omega + kl_psi + kl_phi + kl_w;
        KlBreakdown { kl_xi, kl_omega, kl_psi, kl_phi, kl_w, total }
    }

    /// Only the weight term, as for the non-hierarchical priors.
    pub fn weights_only(kl_w: f64) -> Self {
        KlBreakdown::new(0.0, 0.0, 0.0, 0.0, kl_w)
    }

    /// Componentwise sum; the total is recomputed from the summed parts.
    pub fn combine(&self, other: &KlBreakdown) -> Self {
        KlBreakdown::new(
            self.kl_xi + other.kl_xi,
            self.kl_omega + other.kl_omega,
            self.kl_psi + other.kl_psi,
            self.kl_phi + other.kl_phi,
            self.kl_w + other.kl_w,
        )
    }
}

/// `KL(Ga(a1, b1) || Ga(a2, b2))`, shape–rate.
///
/// Written as `I(q; q) - I(p; q)` with `I(p; q) = E_q[ln p]`.
pub fn kl_gamma_gamma(q: &GammaParams, p: &GammaParams) -> f64 {
    let (a1, b1) = (q.shape(), q.rate());
    let (a2, b2) = (p.shape(), p.rate());
    let e_log = digamma_unchecked(a1) - b1.ln();
    let e_x = a1 / b1;
    let cross = |a: f64, b: f64| a * b.ln() - log_gamma_unchecked(a) + (a - 1.0) * e_log - b * e_x;
    cross(a1, b1) - cross(a2, b2)
}

/// `KL(giG(chi, rho, lambda) || Ga(shape, rate))`.
pub fn kl_gig_gamma(q: &GiGParams, p: &GammaParams) -> Result<f64> {
    let m = gig_moments(q)?;
    let (chi, rho, lambda) = (q.chi(), q.rho(), q.lambda0());
    let e_log_q = if chi == 0.0 {
        // Ga(lambda, rho/2)
        let rate = rho / 2.0;
        lambda * rate.ln() - log_gamma_unchecked(lambda) + (lambda - 1.0) * m.log_mean - rate * m.mean
    } else if rho == 0.0 {
        // the Gamma prior has finite mean, the inverse Gamma may not
        if !m.mean.is_finite() {
            return Ok(f64::INFINITY);
        }
        let (shape, rate) = (-lambda, chi / 2.0);
        shape * rate.ln() - log_gamma_unchecked(shape) - (shape + 1.0) * m.log_mean - rate * m.inv_mean
    } else {
        let omega = (chi * rho).sqrt();
        let log_k = log_bessel_k(BesselOrder::new(lambda)?, omega)?;
        0.5 * lambda * (rho / chi).ln() - std::f64::consts::LN_2 - log_k + (lambda - 1.0) * m.log_mean
            - 0.5 * (rho * m.mean + chi * m.inv_mean)
    };
    let (a, b) = (p.shape(), p.rate());
    let e_log_p = a * b.ln() - log_gamma_unchecked(a) + (a - 1.0) * m.log_mean - b * m.mean;
    Ok(e_log_q - e_log_p)
}

/// KL between the law of `psi` with `1/psi ~ InvGaussian(q_mu, 1)` and the
/// prior `psi ~ Exp(prior_rate)`.
///
/// The divergence is invariant under `psi -> Y = 1/psi`, so it is evaluated
/// on the inverse-Gaussian side where `E[Y] = mu`, `E[1/Y] = 1/mu + 1`, and
/// `E[ln Y] = ln mu - e^(2/mu) E1(2/mu)`.
pub fn kl_psi(q_mu: f64, prior_rate: f64) -> Result<f64> {
    for (name, v) in [("q_mu", q_mu), ("prior_rate", prior_rate)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain("kl_psi", format!("{name} must be finite and > 0, got {v}")));
        }
    }
    let lambda = 1.0;
    let e_log_y = q_mu.ln() - scaled_exp_e1(2.0 * lambda / q_mu);
    let e_inv_y = 1.0 / q_mu + 1.0 / lambda;
    Ok(0.5 * (lambda.ln() - LN_2PI) - 0.5 - prior_rate.ln() + prior_rate * e_inv_y + 0.5 * e_log_y)
}

/// `KL(Dir(alpha_q) || Dir(alpha_p))`.
pub fn kl_dirichlet_dirichlet(q: &DirichletParams, p: &DirichletParams) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::Length { expected: q.len(), got: p.len() });
    }
    let (aq, ap) = (q.alpha(), p.alpha());
    let q0: f64 = aq.iter().sum();
    let p0: f64 = ap.iter().sum();
    let dq0 = digamma_unchecked(q0);
    let mut kl = log_gamma_unchecked(q0) - log_gamma_unchecked(p0);
    for (&a, &b) in aq.iter().zip(ap) {
        kl += log_gamma_unchecked(b) - log_gamma_unchecked(a) + (a - b) * (digamma_unchecked(a) - dq0);
    }
    Ok(kl)
}

fn dirichlet_log_kernel(alpha: &[f64], log_norm: f64, x: &[f64]) -> f64 {
    let mut lp = log_norm;
    for (&a, &v) in alpha.iter().zip(x) {
        lp += (a - 1.0) * v.max(SHRINKAGE_FLOOR).ln();
    }
    lp
}

fn dirichlet_log_norm(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    log_gamma_unchecked(total) - alpha.iter().map(|&a| log_gamma_unchecked(a)).sum::<f64>()
}

/// Bounds on the fitted concentration; a single sample has zero spread and
/// would otherwise imply an infinite one.
const MIN_CONCENTRATION: f64 = 1e-3;
const MAX_CONCENTRATION: f64 = 1e6;

/// Dirichlet parameters fitted to rows of `samples` by matching the
/// coordinate means and the pooled variance.
pub fn fit_dirichlet_moments(samples: &[Vec<f64>]) -> Result<DirichletParams> {
    let first = samples.first().ok_or(Error::Empty("fit_dirichlet_moments"))?;
    let p = first.len();
    if p == 0 {
        return Err(Error::Empty("fit_dirichlet_moments"));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != p) {
        return Err(Error::Length { expected: p, got: bad.len() });
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; p];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v.max(SHRINKAGE_FLOOR);
        }
    }
    let total: f64 = mean.iter().sum();
    mean.iter_mut().for_each(|m| *m /= total);
    let concentration = if samples.len() < 2 {
        MAX_CONCENTRATION
    } else {
        let mut var_sum = 0.0;
        for s in samples {
            for (m, &v) in mean.iter().zip(s) {
                let d = v.max(SHRINKAGE_FLOOR) - m;
                var_sum += d * d;
            }
        }
        var_sum /= n - 1.0;
        // for Dir(alpha): Var_i = m_i (1 - m_i) / (alpha0 + 1)
        let spread: f64 = mean.iter().map(|m| m * (1.0 - m)).sum();
        let c = spread / var_sum - 1.0;
        if c.is_finite() { c.clamp(MIN_CONCENTRATION, MAX_CONCENTRATION) } else { MAX_CONCENTRATION }
    };
    let alpha = mean.iter().map(|&m| (m * concentration).max(f64::MIN_POSITIVE)).collect();
    DirichletParams::new(alpha)
}

/// Monte-Carlo `E_q[ln q_hat - ln prior]`, with `q_hat` the moment-matched
/// Dirichlet fit to `samples`. Deterministic given the samples; may be
/// slightly negative from sampling noise.
pub fn kl_phi_mc(samples: &[Vec<f64>], prior: &DirichletParams) -> Result<f64> {
    let fit = fit_dirichlet_moments(samples)?;
    if fit.len() != prior.len() {
        return Err(Error::Length { expected: prior.len(), got: fit.len() });
    }
    if fit.len() == 1 {
        return Ok(0.0);
    }
    let fit_norm = dirichlet_log_norm(fit.alpha());
    let prior_norm = dirichlet_log_norm(prior.alpha());
    let mut acc = 0.0;
    for s in samples {
        acc += dirichlet_log_kernel(fit.alpha(), fit_norm, s) - dirichlet_log_kernel(prior.alpha(), prior_norm, s);
    }
    Ok(acc / samples.len() as f64)
}

/// Sum of elementwise `KL(N(q_mean, q_var) || N(p_mean, p_var))`.
pub fn kl_gaussian_gaussian(q_mean: &[f64], q_var: &[f64], p_mean: &[f64], p_var: &[f64]) -> Result<f64> {
    let n = q_mean.len();
    for len in [q_var.len(), p_mean.len(), p_var.len()] {
        if len != n {
            return Err(Error::Length { expected: n, got: len });
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        let (qv, pv) = (q_var[i], p_var[i]);
        if !(qv > 0.0 && pv > 0.0) {
            return Err(Error::domain("kl_gaussian_gaussian", format!("variances must be > 0 at index {i}")));
        }
        kl += gaussian_kl_term(q_mean[i], qv, p_mean[i], pv);
    }
    Ok(kl)
}

#[inline]
pub(crate) fn gaussian_kl_term(qm: f64, qv: f64, pm: f64, pv: f64) -> f64 {
    let d = qm - pm;
    0.5 * ((pv / qv).ln() + (qv + d * d) / pv - 1.0)
}

/// KL between zero-centred Laplace laws with scales `b1` (q) and `b2` (p).
pub fn kl_double_exponential(b1: f64, b2: f64) -> Result<f64> {
    if !(b1 > 0.0 && b2 > 0.0 && b1.is_finite() && b2.is_finite()) {
        return Err(Error::domain("kl_double_exponential", format!("scales must be finite and > 0, got ({b1}, {b2})")));
    }
    Ok(b1 / b2 + (b2 / b1).ln() - 1.0)
}
