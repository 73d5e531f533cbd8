//! Densities, samplers and analytic moments for the distributions in the
//! R2D2 hierarchy and the baseline priors.
//!
//! Gamma distributions use the shape–rate convention throughout:
//! `Ga(a, b)` has mean `a / b`.

mod density;
mod gig;
mod rng;

pub use density::{log_density, Dist};
pub use gig::{gig_moments, sample_gig, GigMoments};
pub use rng::RngState;

use crate::error::{Error, Result};
use crate::special_fn::log_gamma_unchecked;

/// Lower edge of the band every sampled shrinkage scalar is clamped to.
pub const SHRINKAGE_FLOOR: f64 = 1e-12;
/// Upper edge of the shrinkage clamp band.
pub const SHRINKAGE_CEIL: f64 = 1e12;

pub fn clamp_shrinkage(x: f64) -> f64 {
    if x.is_nan() {
        return SHRINKAGE_FLOOR;
    }
    x.clamp(SHRINKAGE_FLOOR, SHRINKAGE_CEIL)
}

fn positive(func: &'static str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(func, format!("{name} must be finite and > 0, got {v}")))
    }
}

/// `Ga(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    shape: f64,
    rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        positive("GammaParams::new", "shape", shape)?;
        positive("GammaParams::new", "rate", rate)?;
        Ok(GammaParams { shape, rate })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Inverse Gaussian with mean `mu` and shape `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGaussianParams {
    mu: f64,
    lambda: f64,
}

impl InvGaussianParams {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        positive("InvGaussianParams::new", "mu", mu)?;
        positive("InvGaussianParams::new", "lambda", lambda)?;
        Ok(InvGaussianParams { mu, lambda })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The same law written as a generalized inverse Gaussian.
    pub fn as_gig(&self) -> GiGParams {
        GiGParams {
            chi: self.lambda,
            rho: self.lambda / (self.mu * self.mu),
            lambda0: -0.5,
        }
    }
}

/// Generalized inverse Gaussian with density proportional to
/// `z^(lambda0 - 1) exp(-(rho z + chi / z) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GiGParams {
    chi: f64,
    rho: f64,
    lambda0: f64,
}

impl GiGParams {
    pub fn new(chi: f64, rho: f64, lambda0: f64) -> Result<Self> {
        let bad = |detail: String| Err(Error::domain("GiGParams::new", detail));
        if !(chi.is_finite() && rho.is_finite() && lambda0.is_finite()) {
            return bad(format!("non-finite parameters ({chi}, {rho}, {lambda0})"));
        }
        if chi < 0.0 || rho < 0.0 {
            return bad(format!("chi and rho must be >= 0, got ({chi}, {rho})"));
        }
        if chi == 0.0 && lambda0 <= 0.0 {
            return bad(format!("chi = 0 requires lambda0 > 0, got {lambda0}"));
        }
        if rho == 0.0 && lambda0 >= 0.0 {
            return bad(format!("rho = 0 requires lambda0 < 0, got {lambda0}"));
        }
        Ok(GiGParams { chi, rho, lambda0 })
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }
}

/// Dirichlet with concentration vector `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Empty("DirichletParams::new"));
        }
        for &a in &alpha {
            positive("DirichletParams::new", "alpha entry", a)?;
        }
        Ok(DirichletParams { alpha })
    }

    pub fn symmetric(alpha: f64, len: usize) -> Result<Self> {
        DirichletParams::new(vec![alpha; len])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Log density at a point of the simplex; `-inf` off the simplex.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        if x.len() != self.alpha.len() {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || x.iter().any(|&v| !(v > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let total: f64 = self.alpha.iter().sum();
        let mut lp = log_gamma_unchecked(total);
        for (&a, &v) in self.alpha.iter().zip(x) {
            lp += (a - 1.0) * v.ln() - log_gamma_unchecked(a);
        }
        lp
    }
}

/// `ln` of a standard gamma draw `Ga(shape, 1)`; stays finite for tiny shapes.
fn log_standard_gamma(shape: f64, rng: &mut RngState) -> f64 {
    if shape < 1.0 {
        let boosted = standard_gamma_ge1(shape + 1.0, rng);
        return boosted.ln() + rng.uniform().ln() / shape;
    }
    standard_gamma_ge1(shape, rng).ln()
}

/// Marsaglia–Tsang squeeze for `shape >= 1`.
fn standard_gamma_ge1(shape: f64, rng: &mut RngState) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.uniform();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

pub fn sample_gamma(params: &GammaParams, rng: &mut RngState) -> f64 {
    let g = if params.shape >= 1.0 {
        standard_gamma_ge1(params.shape, rng)
    } else {
        log_standard_gamma(params.shape, rng).exp()
    };
    g / params.rate
}

pub fn sample_exponential(rate: f64, rng: &mut RngState) -> Result<f64> {
    positive("sample_exponential", "rate", rate)?;
    Ok(-rng.uniform().ln() / rate)
}

/// Dirichlet draw by normalizing independent `Ga(alpha_i, 1)` draws. The
/// normalization runs in log space so tiny concentrations cannot produce
/// an all-zero vector.
pub fn sample_dirichlet(params: &DirichletParams, rng: &mut RngState) -> Vec<f64> {
    let logs: Vec<f64> = params.alpha.iter().map(|&a| log_standard_gamma(a, rng)).collect();
    normalize_log_weights(&logs)
}

pub(crate) fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Michael–Schucany–Haas transformation sampler.
pub fn sample_inv_gaussian(params: &InvGaussianParams, rng: &mut RngState) -> f64 {
    let mu = params.mu;
    let nu = rng.standard_normal();
    let t = mu * nu * nu / params.lambda;
    // smaller root of the quadratic, written without cancellation
    let x = mu / (1.0 + 0.5 * t + 0.5 * (t * t + 4.0 * t).sqrt());
    if rng.uniform() <= mu / (mu + x) {
        x
    } else {
        mu * mu / x
    }
}
