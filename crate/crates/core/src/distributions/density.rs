use std::f64::consts::PI;

use super::{GammaParams, GiGParams, InvGaussianParams};
use crate::special_fn::{log_bessel_k, log_gamma_unchecked, scaled_exp_e1, BesselOrder};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Univariate distribution descriptor for [`log_density`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Normal { mean: f64, sd: f64 },
    Gamma(GammaParams),
    Exponential { rate: f64 },
    InvGaussian(InvGaussianParams),
    /// Law of `1/Y` for `Y` inverse Gaussian.
    ReciprocalInvGaussian(InvGaussianParams),
    GiG(GiGParams),
    HalfCauchy { scale: f64 },
    /// Marginal of `N(0, tau^2)` with `tau ~ C+(0, scale)`.
    Horseshoe { scale: f64 },
    /// `w N(0, slab_sd^2) + (1 - w) N(0, spike_sd^2)`.
    SpikeSlab { slab_weight: f64, spike_sd: f64, slab_sd: f64 },
    /// Laplace with location 0 and scale `scale`.
    DoubleExponential { scale: f64 },
    GeneralizedDoublePareto { eta: f64, alpha: f64 },
}

fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn inv_gaussian_log_pdf(x: f64, p: &InvGaussianParams) -> f64 {
    let (mu, lambda) = (p.mu, p.lambda);
    0.5 * (lambda / (2.0 * PI)).ln() - 1.5 * x.ln() - lambda * (x - mu) * (x - mu) / (2.0 * mu * mu * x)
}

/// Natural-log density with exact normalizing constants. Points outside the
/// support give negative infinity.
pub fn log_density(dist: &Dist, x: f64) -> f64 {
    if x.is_nan() {
        return f64::NEG_INFINITY;
    }
    match *dist {
        Dist::Normal { mean, sd } => normal_log_pdf(x, mean, sd),
        Dist::Gamma(g) => {
            if x <= 0.0 {
                return f64::NEG_INFINITY;
            }
            g.shape * g.rate.ln() - log_gamma_unchecked(g.shape) + (g.shape - 1.0) * x.ln() - g.rate * x
        }
        Dist::Exponential { rate } => {
            if x < 0.0 {
                return f64::NEG_INFINITY;
            }
            rate.ln() - rate * x
        }
        Dist::InvGaussian(p) => {
            if x <= 0.0 {
                return f64::NEG_INFINITY;
            }
            inv_gaussian_log_pdf(x, &p)
        }
        Dist::ReciprocalInvGaussian(p) => {
            if x <= 0.0 {
                return f64::NEG_INFINITY;
            }
            inv_gaussian_log_pdf(1.0 / x, &p) - 2.0 * x.ln()
        }
        Dist::GiG(p) => {
            if x <= 0.0 {
                return f64::NEG_INFINITY;
            }
            gig_log_pdf(x, &p)
        }
        Dist::HalfCauchy { scale } => {
            if x < 0.0 {
                return f64::NEG_INFINITY;
            }
            (2.0 / (PI * scale)).ln() - (x / scale).powi(2).ln_1p()
        }
        Dist::Horseshoe { scale } => {
            // exp(z) E1(z) / sqrt(2 pi^3) with z = beta^2 / 2 on the unit scale
            let b = x / scale;
            let z = 0.5 * b * b;
            if z == 0.0 {
                return f64::INFINITY;
            }
            scaled_exp_e1(z).ln() - 0.5 * (2.0 * PI.powi(3)).ln() - scale.ln()
        }
        Dist::SpikeSlab { slab_weight, spike_sd, slab_sd } => log_sum_exp2(
            slab_weight.ln() + normal_log_pdf(x, 0.0, slab_sd),
            (1.0 - slab_weight).ln() + normal_log_pdf(x, 0.0, spike_sd),
        ),
        Dist::DoubleExponential { scale } => -(2.0 * scale).ln() - x.abs() / scale,
        Dist::GeneralizedDoublePareto { eta, alpha } => {
            (alpha / (2.0 * eta)).ln() - (alpha + 1.0) * (x.abs() / eta).ln_1p()
        }
    }
}

fn gig_log_pdf(x: f64, p: &GiGParams) -> f64 {
    let (chi, rho, lambda) = (p.chi, p.rho, p.lambda0);
    if chi == 0.0 {
        let g = GammaParams { shape: lambda, rate: rho / 2.0 };
        return log_density(&Dist::Gamma(g), x);
    }
    if rho == 0.0 {
        let g = GammaParams { shape: -lambda, rate: chi / 2.0 };
        return log_density(&Dist::Gamma(g), 1.0 / x) - 2.0 * x.ln();
    }
    let omega = (rho * chi).sqrt();
    let log_k = log_bessel_k(BesselOrder(lambda), omega).expect("validated parameters");
    0.5 * lambda * (rho / chi).ln() - 2f64.ln() - log_k + (lambda - 1.0) * x.ln() - 0.5 * (rho * x + chi / x)
}
