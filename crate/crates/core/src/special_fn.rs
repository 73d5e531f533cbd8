//! Scalar special functions: modified Bessel function of the second kind,
//! its order derivative, log-gamma, digamma and softplus.
//!
//! `K_nu(x)` is evaluated by reducing the order to `mu` in `[-1/2, 1/2)`,
//! computing `K_mu` and `K_{mu+1}` with Temme's series (`x < 2`) or Steed's
//! continued fraction (`x >= 2`), and then running the forward recurrence in
//! ratio form so that huge orders never overflow.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Order of a modified Bessel function. May be negative or non-integer.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BesselOrder(pub(crate) f64);

impl BesselOrder {
    pub fn new(nu: f64) -> Result<Self> {
        if !nu.is_finite() {
            return Err(Error::domain("BesselOrder::new", format!("order must be finite, got {nu}")));
        }
        Ok(BesselOrder(nu))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for BesselOrder {
    type Error = Error;

    fn try_from(nu: f64) -> Result<Self> {
        BesselOrder::new(nu)
    }
}

const G1_CHEB: [f64; 14] = [
    -1.145_164_083_662_683_1,
    0.006_360_853_113_470_842,
    0.001_862_451_930_072_068_5,
    0.000_152_833_085_873_453_5,
    0.000_017_017_464_011_802_04,
    -6.459_750_292_334_735e-7,
    -5.181_984_843_251_938e-8,
    4.518_909_289_485_818e-10,
    3.243_322_737_102_087e-11,
    6.830_943_402_494_752e-13,
    2.835_350_275_517_21e-14,
    -7.988_390_576_932_359e-16,
    -3.372_667_730_077_195e-17,
    -3.658_633_480_921_052e-20,
];

const G2_CHEB: [f64; 15] = [
    1.882_645_524_949_671_8,
    -0.077_490_658_396_167_52,
    -0.018_256_714_847_324_93,
    0.000_633_803_020_907_489_6,
    0.000_076_229_054_350_872_9,
    -9.550_164_756_172_044e-7,
    -8.892_726_810_788_635e-8,
    -1.952_133_477_231_961_4e-9,
    -9.400_305_273_588_516e-11,
    4.687_513_384_953_239e-12,
    2.265_853_574_692_576e-13,
    -1.172_550_969_848_801_5e-15,
    -7.044_133_820_024_522e-17,
    -2.437_787_831_010_769_3e-18,
    -7.522_524_321_825_39e-20,
];

fn cheb_eval(coeffs: &[f64], y: f64) -> f64 {
    let y2 = 2.0 * y;
    let (mut d, mut dd) = (0.0, 0.0);
    for &c in coeffs[1..].iter().rev() {
        let tmp = d;
        d = y2 * d - dd + c;
        dd = tmp;
    }
    y * d - dd + 0.5 * coeffs[0]
}

/// Temme's auxiliary gamma functions for `|mu| <= 1/2`.
/// Returns `(Gamma(1+mu), Gamma(1-mu), g1, g2)`.
fn temme_gamma(mu: f64) -> (f64, f64, f64, f64) {
    let y = 4.0 * mu.abs() - 1.0;
    let g1 = cheb_eval(&G1_CHEB, y);
    let g2 = cheb_eval(&G2_CHEB, y);
    let gamma_1mmu = 1.0 / (g2 + mu * g1);
    let gamma_1pmu = 1.0 / (g2 - mu * g1);
    (gamma_1pmu, gamma_1mmu, g1, g2)
}

/// Exponentially scaled `(e^x K_mu(x), e^x K_{mu+1}(x))` for `x < 2`.
fn k_scaled_temme(mu: f64, x: f64) -> (f64, f64) {
    let half_x = 0.5 * x;
    let ln_half_x = half_x.ln();
    let half_x_mu = (mu * ln_half_x).exp();
    let pi_mu = PI * mu;
    let sigma = -mu * ln_half_x;
    let sinrat = if pi_mu.abs() < f64::EPSILON { 1.0 } else { pi_mu / pi_mu.sin() };
    let sinhrat = if sigma.abs() < f64::EPSILON { 1.0 } else { sigma.sinh() / sigma };
    let (gamma_1pmu, gamma_1mmu, g1, g2) = temme_gamma(mu);

    let mut fk = sinrat * (sigma.cosh() * g1 - sinhrat * ln_half_x * g2);
    let mut pk = 0.5 / half_x_mu * gamma_1pmu;
    let mut qk = 0.5 * half_x_mu * gamma_1mmu;
    let mut hk = pk;
    let mut ck = 1.0;
    let mut sum0 = fk;
    let mut sum1 = hk;
    for k in 1..15_000 {
        let k = k as f64;
        fk = (k * fk + pk + qk) / (k * k - mu * mu);
        ck *= half_x * half_x / k;
        pk /= k - mu;
        qk /= k + mu;
        hk = -k * fk + pk;
        let del0 = ck * fk;
        sum0 += del0;
        sum1 += ck * hk;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON {
            break;
        }
    }
    let ex = x.exp();
    (sum0 * ex, sum1 * 2.0 / x * ex)
}

/// Exponentially scaled `(e^x K_mu(x), e^x K_{mu+1}(x))` for `x >= 2`, via
/// Steed's method on Temme's second continued fraction.
fn k_scaled_steed(mu: f64, x: f64) -> (f64, f64) {
    let mut bi = 2.0 * (1.0 + x);
    let mut di = 1.0 / bi;
    let mut delhi = di;
    let mut hi = di;
    let mut qi = 0.0;
    let mut qip1 = 1.0;
    let mut ai = -(0.25 - mu * mu);
    let a1 = ai;
    let mut ci = -ai;
    let mut big_qi = -ai;
    let mut s = 1.0 + big_qi * delhi;
    for i in 2..10_000 {
        let i = i as f64;
        ai -= 2.0 * (i - 1.0);
        ci = -ai * ci / i;
        let tmp = (qi - bi * qip1) / ai;
        qi = qip1;
        qip1 = tmp;
        big_qi += ci * qip1;
        bi += 2.0;
        di = 1.0 / (bi + ai * di);
        delhi = (bi * di - 1.0) * delhi;
        hi += delhi;
        let dels = big_qi * delhi;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    hi *= -a1;
    let k_mu = (PI / (2.0 * x)).sqrt() / s;
    let k_mu1 = k_mu * (mu + x + 0.5 - hi) / x;
    (k_mu, k_mu1)
}

fn check_arg(func: &'static str, nu: f64, x: f64) -> Result<()> {
    if !nu.is_finite() {
        return Err(Error::domain(func, format!("order must be finite, got {nu}")));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(func, format!("argument must be finite and > 0, got {x}")));
    }
    Ok(())
}

/// `(ln K_nu(x), ln K_{nu+1}(x))` for `nu >= 0`.
fn log_k_pair(nu: f64, x: f64) -> (f64, f64) {
    debug_assert!(nu >= 0.0);
    let n = (nu + 0.5).floor();
    let mu = nu - n;
    let (k_mu, k_mu1) = if x < 2.0 { k_scaled_temme(mu, x) } else { k_scaled_steed(mu, x) };
    // Forward recurrence on r_i = K_{mu+i+1} / K_{mu+i}, which never overflows.
    let mut ratio = k_mu1 / k_mu;
    let mut log_k = k_mu.ln();
    for i in 1..=(n as u64) {
        log_k += ratio.ln();
        ratio = 1.0 / ratio + 2.0 * (mu + i as f64) / x;
    }
    (log_k - x, log_k + ratio.ln() - x)
}

/// Natural log of `K_nu(x)`.
pub fn log_bessel_k(nu: BesselOrder, x: f64) -> Result<f64> {
    check_arg("log_bessel_k", nu.0, x)?;
    Ok(log_k_pair(nu.0.abs(), x).0)
}

/// Modified Bessel function of the second kind `K_nu(x)`. Overflows to
/// `+inf` when the true value exceeds the double range; use
/// [`log_bessel_k`] for large orders.
pub fn bessel_k(nu: BesselOrder, x: f64) -> Result<f64> {
    log_bessel_k(nu, x).map(f64::exp)
}

/// `ln K_{nu+1}(x) - ln K_nu(x)`, valid for any real `nu`.
pub fn log_bessel_k_ratio(nu: BesselOrder, x: f64) -> Result<f64> {
    check_arg("log_bessel_k_ratio", nu.0, x)?;
    let nu = nu.0;
    if nu >= 0.0 {
        let (a, b) = log_k_pair(nu, x);
        Ok(b - a)
    } else {
        // K_{nu+1} = K_{|nu+1|}, K_nu = K_{|nu|}
        Ok(log_k_pair((nu + 1.0).abs(), x).0 - log_k_pair(-nu, x).0)
    }
}

/// Central-difference estimate of `d/dnu ln K_nu(x)` with step
/// `h = max(1e-5, 1e-7 |nu|)`.
pub fn dlog_bessel_k_dnu(nu: BesselOrder, x: f64) -> Result<f64> {
    check_arg("dlog_bessel_k_dnu", nu.0, x)?;
    let nu = nu.0;
    let h = dlog_bessel_step(nu);
    let up = log_k_pair((nu + h).abs(), x).0;
    let down = log_k_pair((nu - h).abs(), x).0;
    Ok((up - down) / (2.0 * h))
}

/// Step size used by [`dlog_bessel_k_dnu`].
pub fn dlog_bessel_step(nu: f64) -> f64 {
    (1e-7 * nu.abs()).max(1e-5)
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln Gamma(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("log_gamma", format!("argument must be finite and > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    if x < 10.0 {
        let mut prod = 1.0;
        while x < 10.0 {
            prod *= x;
            x += 1.0;
        }
        shift = prod.ln();
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Stirling series through the x^-13 term
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2 * (1.0 / 1188.0 + inv2 * (-691.0 / 360_360.0 + inv2 / 156.0))))));
    (x - 0.5) * x.ln() - x + LN_SQRT_2PI + series - shift
}

/// Digamma function `psi(x) = d/dx ln Gamma(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("digamma", format!("argument must be finite and > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Overflow-safe `ln(1 + e^rho)`.
pub fn softplus(rho: f64) -> f64 {
    if rho > 30.0 {
        rho + (-rho).exp().ln_1p()
    } else {
        rho.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `e^z E_1(z)` for `z > 0`, where `E_1` is the exponential integral.
pub(crate) fn scaled_exp_e1(z: f64) -> f64 {
    if z < 1.0 {
        // power series: E1(z) = -gamma - ln z - sum_{k>=1} (-z)^k / (k k!)
        const EULER: f64 = 0.577_215_664_901_532_9;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            term *= -z / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        (-EULER - z.ln() - sum) * z.exp()
    } else {
        // modified Lentz continued fraction for e^z E1(z) = 1/(z+1-1/(z+3-4/(z+5-...)))
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}
