//! Independent oracles shared by the integration tests: adaptive
//! Gauss–Kronrod quadrature, Kolmogorov–Smirnov statistics, Monte-Carlo
//! summaries and central finite differences. Nothing here calls into the
//! implementation paths it is used to check.
#![allow(dead_code)]

pub mod gradcheck;
pub mod suites;

use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Segment {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.partial_cmp(&o.err).unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Globally adaptive G7K15 quadrature on a finite interval. The interval
/// starts pre-split so narrow peaks cannot hide between the first nodes.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    const INITIAL: usize = 64;
    let mut heap = BinaryHeap::new();
    let (mut total, mut total_err) = (0.0, 0.0);
    for i in 0..INITIAL {
        let lo = a + (b - a) * i as f64 / INITIAL as f64;
        let hi = a + (b - a) * (i + 1) as f64 / INITIAL as f64;
        let (v, e) = gk15(&f, lo, hi);
        total += v;
        total_err += e;
        heap.push(Segment { a: lo, b: hi, value: v, err: e });
    }
    for _ in 0..20_000 {
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let seg = heap.pop().unwrap();
        let m = 0.5 * (seg.a + seg.b);
        let (v1, e1) = gk15(&f, seg.a, m);
        let (v2, e2) = gk15(&f, m, seg.b);
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.err;
        heap.push(Segment { a: seg.a, b: m, value: v1, err: e1 });
        heap.push(Segment { a: m, b: seg.b, value: v2, err: e2 });
    }
    // re-sum to shed accumulated rounding from the running updates
    heap.into_iter().map(|s| s.value).sum()
}

/// Integral over the whole real line via `x = t / (1 - t^2)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F) -> f64 {
    integrate(
        |t: f64| {
            let d = 1.0 - t * t;
            let x = t / d;
            let v = f(x) * (1.0 + t * t) / (d * d);
            if v.is_finite() { v } else { 0.0 }
        },
        -1.0,
        1.0,
        1e-14,
        1e-12,
    )
}

/// Integral over `(0, inf)` computed in log space, `x = e^u`, which removes
/// power-law endpoint singularities at zero.
pub fn integrate_positive<F: Fn(f64) -> f64>(f: F) -> f64 {
    integrate_real_line(|u: f64| {
        if u.abs() > 700.0 {
            return 0.0;
        }
        let x = u.exp();
        f(x) * x
    })
}

/// Integral over `(0, inf)` with `x = scale e^u`, for integrands
/// concentrated near `scale`.
pub fn integrate_positive_at<F: Fn(f64) -> f64>(f: F, scale: f64) -> f64 {
    integrate_real_line(|u: f64| {
        if u.abs() > 700.0 {
            return 0.0;
        }
        let x = scale * u.exp();
        f(x) * x
    })
}

/// Integral over `(0, 1)` via the logit substitution.
pub fn integrate_unit<F: Fn(f64) -> f64>(f: F) -> f64 {
    integrate_real_line(|z: f64| {
        if z.abs() > 700.0 {
            return 0.0;
        }
        let x = 1.0 / (1.0 + (-z).exp());
        f(x) * x * (1.0 - x)
    })
}

/// `KL(q || p) = int q log(q / p)` with both given as log densities.
pub fn kl_quadrature_positive<Q: Fn(f64) -> f64, P: Fn(f64) -> f64>(log_q: Q, log_p: P) -> f64 {
    integrate_positive(|x| {
        let lq = log_q(x);
        if lq == f64::NEG_INFINITY {
            return 0.0;
        }
        lq.exp() * (lq - log_p(x))
    })
}

pub fn kl_quadrature_real<Q: Fn(f64) -> f64, P: Fn(f64) -> f64>(log_q: Q, log_p: P) -> f64 {
    integrate_real_line(|x| {
        let lq = log_q(x);
        if lq == f64::NEG_INFINITY {
            return 0.0;
        }
        lq.exp() * (lq - log_p(x))
    })
}

pub fn kl_quadrature_unit<Q: Fn(f64) -> f64, P: Fn(f64) -> f64>(log_q: Q, log_p: P) -> f64 {
    integrate_unit(|x| {
        let lq = log_q(x);
        if lq == f64::NEG_INFINITY {
            return 0.0;
        }
        lq.exp() * (lq - log_p(x))
    })
}

/// Natural log of the gamma function by direct numerical integration of
/// `int_0^inf t^(x-1) e^-t dt`, independent of the library's series.
pub fn log_gamma_quadrature(x: f64) -> f64 {
    // scale out the peak at t = x - 1 to keep the integrand O(1)
    let peak = (x - 1.0).max(1e-3);
    let log_peak = (x - 1.0) * peak.ln() - peak;
    integrate_positive(|t| ((x - 1.0) * t.ln() - t - log_peak).exp()).ln() + log_peak
}

pub fn beta_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - log_beta(a, b)
}

fn log_beta(a: f64, b: f64) -> f64 {
    log_gamma_quadrature(a) + log_gamma_quadrature(b) - log_gamma_quadrature(a + b)
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Sample variance and the standard error of the variance estimate.
pub fn var_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (v, ((m4 - v * v) / n).sqrt())
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Standard normal CDF via a high-accuracy erfc evaluation.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function (W. J. Cody's rational approximations
/// replaced by a continued fraction / series split, accurate to ~1e-14).
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        // series for erf
        let mut sum = x;
        let mut term = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 {
                break;
            }
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        // Lentz continued fraction
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for n in 1..500 {
            let an = n as f64 / 2.0;
            d = x + an * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = x + an / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
    }
}

/// Inverse-Gaussian CDF in closed form.
pub fn inv_gaussian_cdf(x: f64, mu: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let s = (lambda / x).sqrt();
    let a = normal_cdf(s * (x / mu - 1.0));
    let b = (2.0 * lambda / mu).exp() * normal_cdf(-s * (x / mu + 1.0));
    a + b
}

/// Central finite difference of `f` with respect to `x[i]`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let up = f(&xp);
    xp[i] = x[i] - h;
    let down = f(&xp);
    (up - down) / (2.0 * h)
}

/// Small deterministic generator for test parameter grids, independent of
/// the library's RNG.
pub struct Grid(u64);

impl Grid {
    pub fn new(seed: u64) -> Self {
        Grid(seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407))
    }

    pub fn unit(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn log_range(&mut self, lo: f64, hi: f64) -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * self.unit()).exp()
    }
}

/// Integral over the real line with `x = center + width * t / (1 - t^2)`.
pub fn integrate_real_at<F: Fn(f64) -> f64>(f: F, center: f64, width: f64) -> f64 {
    integrate_real_line(|s| f(center + width * s)) * width
}

/// `KL(q || p)` for two unnormalized log-kernels on the real line. Both
/// normalizers are integrated numerically, so the oracle needs no special
/// functions. `q_at` and `p_at` give a (center, width) for each kernel.
pub fn kl_kernels<Q: Fn(f64) -> f64, P: Fn(f64) -> f64>(kq: Q, q_at: (f64, f64), kp: P, p_at: (f64, f64)) -> f64 {
    let cq = kq(q_at.0);
    let cp = kp(p_at.0);
    let zq = integrate_real_at(|x| (kq(x) - cq).exp(), q_at.0, q_at.1);
    let zp = integrate_real_at(|x| (kp(x) - cp).exp(), p_at.0, p_at.1);
    let cross = integrate_real_at(
        |x| {
            let a = kq(x);
            if a == f64::NEG_INFINITY {
                return 0.0;
            }
            let w = (a - cq).exp();
            if w == 0.0 { 0.0 } else { w * (a - kp(x)) }
        },
        q_at.0,
        q_at.1,
    ) / zq;
    cross - (zq.ln() + cq) + (zp.ln() + cp)
}

/// Log-kernel of `Ga(a, b)` for `u = ln x`, and where it peaks.
pub fn gamma_log_kernel(a: f64, b: f64) -> (impl Fn(f64) -> f64, (f64, f64)) {
    (move |u: f64| a * u - b * u.exp(), ((a / b).ln(), 1.0 / a.sqrt()))
}

/// Log-kernel of `giG(chi, rho, lambda)` for `u = ln x`, and where it peaks.
pub fn gig_log_kernel(chi: f64, rho: f64, lambda: f64) -> (impl Fn(f64) -> f64, (f64, f64)) {
    // peak solves rho v^2 - 2 lambda v - chi = 0
    let s = (lambda * lambda + chi * rho).sqrt();
    let v = if lambda >= 0.0 { (lambda + s) / rho } else { chi / (s - lambda) };
    let width = 1.0 / (0.5 * (rho * v + chi / v)).sqrt();
    (move |u: f64| lambda * u - 0.5 * (rho * u.exp() + chi * (-u).exp()), (v.ln(), width))
}

/// `KL(q || p)` between the law of `psi` with `1/psi ~ IG(mu, 1)` and
/// `Exp(rate)`, evaluated on `u = ln(1/psi)`.
pub fn kl_psi_oracle(mu: f64, rate: f64) -> f64 {
    let kq = move |u: f64| {
        let y = u.exp();
        -0.5 * u - (y - mu) * (y - mu) / (2.0 * mu * mu * y)
    };
    // density of Y = 1/psi is rate e^(-rate/y) / y^2
    let kp = move |u: f64| -rate * (-u).exp() - u;
    let v = 2.0 / (1.0 + (1.0 + 4.0 / (mu * mu)).sqrt());
    kl_kernels(kq, (v.ln(), mu.sqrt().min(1.0)), kp, (rate.ln(), 1.0))
}

pub fn kl_gamma_oracle(q: (f64, f64), p: (f64, f64)) -> f64 {
    let (kq, aq) = gamma_log_kernel(q.0, q.1);
    let (kp, ap) = gamma_log_kernel(p.0, p.1);
    kl_kernels(kq, aq, kp, ap)
}

pub fn kl_gig_gamma_oracle(q: (f64, f64, f64), p: (f64, f64)) -> f64 {
    let (kq, aq) = gig_log_kernel(q.0, q.1, q.2);
    let (kp, ap) = gamma_log_kernel(p.0, p.1);
    kl_kernels(kq, aq, kp, ap)
}

/// Dirichlet KL by stick-breaking: `Dir(alpha)` factorizes into independent
/// `Beta(alpha_k, sum_{j>k} alpha_j)` sticks, so the KL is a sum of Beta
/// KLs, each integrated on the logit scale.
pub fn kl_dirichlet_oracle(q: &[f64], p: &[f64]) -> f64 {
    let beta_kernel = |a: f64, b: f64| {
        let k = move |z: f64| {
            // ln sigma(z) and ln sigma(-z), overflow-safe
            let ls = if z >= 0.0 { -(-z).exp().ln_1p() } else { z - z.exp().ln_1p() };
            let lsn = ls - z;
            a * ls + b * lsn
        };
        (k, ((a / b).ln(), (1.0 / a + 1.0 / b).sqrt()))
    };
    let mut kl = 0.0;
    for k in 0..q.len() - 1 {
        let (qa, qb) = (q[k], q[k + 1..].iter().sum::<f64>());
        let (pa, pb) = (p[k], p[k + 1..].iter().sum::<f64>());
        let (kq, aq) = beta_kernel(qa, qb);
        let (kp, ap) = beta_kernel(pa, pb);
        kl += kl_kernels(kq, aq, kp, ap);
    }
    kl
}

pub fn kl_gaussian_oracle(qm: f64, qv: f64, pm: f64, pv: f64) -> f64 {
    kl_kernels(
        move |x: f64| -0.5 * (x - qm) * (x - qm) / qv,
        (qm, qv.sqrt()),
        move |x: f64| -0.5 * (x - pm) * (x - pm) / pv,
        (pm, pv.sqrt()),
    )
}

pub fn kl_laplace_oracle(b1: f64, b2: f64) -> f64 {
    kl_kernels(move |x: f64| -x.abs() / b1, (0.0, b1), move |x: f64| -x.abs() / b2, (0.0, b2))
}

/// Relative agreement with an absolute floor for values near zero.
pub fn close(got: f64, want: f64, rel: f64, abs: f64) -> bool {
    (got - want).abs() <= abs.max(rel * want.abs())
}
