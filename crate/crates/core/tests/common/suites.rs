//! Parameter sweeps shared by the per-module tests and the acceptance
//! report. Each returns raw comparisons; callers pick the tolerance.

use super::{close, integrate_positive_at, mean_se, var_se, Grid};
use r2d2_core::distributions::{
    sample_dirichlet, sample_gamma, sample_gig, sample_inv_gaussian, DirichletParams, GammaParams, GiGParams,
    InvGaussianParams, RngState,
};
use r2d2_core::divergence::{
    kl_dirichlet_dirichlet, kl_double_exponential, kl_gamma_gamma, kl_gaussian_gaussian, kl_gig_gamma, kl_psi,
};

/// Unnormalized giG log-kernel, normalized numerically; independent of the
/// Bessel routines.
pub fn gig_quadrature_moment(chi: f64, rho: f64, lambda: f64, g: impl Fn(f64) -> f64) -> f64 {
    let mode = {
        // root of rho x^2 - 2 (lambda - 1) x - chi, in cancellation-free form
        let l = lambda - 1.0;
        let s = (l * l + chi * rho).sqrt();
        if l >= 0.0 { (l + s) / rho } else { chi / (s - l) }
    };
    let lk = |x: f64| (lambda - 1.0) * (x / mode).ln() - 0.5 * (rho * (x - mode) + chi * (1.0 / x - 1.0 / mode));
    let z = integrate_positive_at(|x| lk(x).exp(), mode);
    integrate_positive_at(|x| lk(x).exp() * g(x), mode) / z
}

/// One closed-form KL against its quadrature oracle.
#[derive(Debug, Clone)]
pub struct KlCheck {
    pub family: &'static str,
    pub params: String,
    pub closed_form: f64,
    pub quadrature: f64,
}

impl KlCheck {
    /// Relative error, with values below `abs_floor` compared absolutely.
    pub fn error(&self, abs_floor: f64) -> f64 {
        (self.closed_form - self.quadrature).abs() / self.quadrature.abs().max(abs_floor)
    }

    pub fn passes(&self, rel: f64, abs_floor: f64) -> bool {
        close(self.closed_form, self.quadrature, rel, abs_floor * rel)
    }
}

/// `points` random parameter settings for each of the six closed forms.
pub fn kl_grid(seed: u64, points: usize) -> Vec<KlCheck> {
    let mut g = Grid::new(seed);
    let gamma = |a: f64, b: f64| GammaParams::new(a, b).unwrap();
    let mut out = Vec::with_capacity(6 * points);
    for _ in 0..points {
        let (a1, b1, a2, b2) = (g.log_range(0.2, 30.0), g.log_range(0.1, 10.0), g.log_range(0.2, 30.0), g.log_range(0.1, 10.0));
        out.push(KlCheck {
            family: "gamma",
            params: format!("({a1}, {b1}) || ({a2}, {b2})"),
            closed_form: kl_gamma_gamma(&gamma(a1, b1), &gamma(a2, b2)),
            quadrature: super::kl_gamma_oracle((a1, b1), (a2, b2)),
        });

        let (chi, rho, lam) = (g.log_range(0.05, 20.0), g.log_range(0.05, 20.0), g.range(-40.0, 10.0));
        out.push(KlCheck {
            family: "gig_gamma",
            params: format!("({chi}, {rho}, {lam}) || ({a2}, {b2})"),
            closed_form: kl_gig_gamma(&GiGParams::new(chi, rho, lam).unwrap(), &gamma(a2, b2)).unwrap(),
            quadrature: super::kl_gig_gamma_oracle((chi, rho, lam), (a2, b2)),
        });

        let (mu, rate) = (g.log_range(1e-3, 1e3), g.log_range(0.1, 5.0));
        out.push(KlCheck {
            family: "psi",
            params: format!("mu {mu}, rate {rate}"),
            closed_form: kl_psi(mu, rate).unwrap(),
            quadrature: super::kl_psi_oracle(mu, rate),
        });

        let k = 2 + (g.unit() * 4.0) as usize;
        let q: Vec<f64> = (0..k).map(|_| g.log_range(0.1, 10.0)).collect();
        let p: Vec<f64> = (0..k).map(|_| g.log_range(0.1, 10.0)).collect();
        out.push(KlCheck {
            family: "dirichlet",
            params: format!("{q:?} || {p:?}"),
            closed_form: kl_dirichlet_dirichlet(
                &DirichletParams::new(q.clone()).unwrap(),
                &DirichletParams::new(p.clone()).unwrap(),
            )
            .unwrap(),
            quadrature: super::kl_dirichlet_oracle(&q, &p),
        });

        let (l1, l2) = (g.log_range(0.05, 20.0), g.log_range(0.05, 20.0));
        out.push(KlCheck {
            family: "double_exponential",
            params: format!("{l1} || {l2}"),
            closed_form: kl_double_exponential(l1, l2).unwrap(),
            quadrature: super::kl_laplace_oracle(l1, l2),
        });

        let (qm, qv, pm, pv) = (g.range(-3.0, 3.0), g.log_range(0.01, 10.0), g.range(-3.0, 3.0), g.log_range(0.01, 10.0));
        out.push(KlCheck {
            family: "gaussian",
            params: format!("N({qm}, {qv}) || N({pm}, {pv})"),
            closed_form: kl_gaussian_gaussian(&[qm], &[qv], &[pm], &[pv]).unwrap(),
            quadrature: super::kl_gaussian_oracle(qm, qv, pm, pv),
        });
    }
    out
}

/// An empirical moment with its standard error against an analytic value.
#[derive(Debug, Clone)]
pub struct MomentCheck {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub analytic: f64,
}

impl MomentCheck {
    /// Deviation in standard errors.
    pub fn z(&self) -> f64 {
        (self.estimate - self.analytic).abs() / self.se
    }
}

fn draws(n: usize, seed: u64, mut f: impl FnMut(&mut RngState) -> f64) -> Vec<f64> {
    let mut rng = RngState::new(seed, 0);
    (0..n).map(|_| f(&mut rng)).collect()
}

fn mean_check(label: String, xs: &[f64], analytic: f64) -> MomentCheck {
    let (estimate, se) = mean_se(xs);
    MomentCheck { label, estimate, se, analytic }
}

fn var_check(label: String, xs: &[f64], analytic: f64) -> MomentCheck {
    let (estimate, se) = var_se(xs);
    MomentCheck { label, estimate, se, analytic }
}

/// Twenty sampler settings with `n` draws each: eight giG (mean and inverse
/// mean against quadrature), four inverse Gaussian and four Gamma (mean and
/// variance), four Dirichlet (every marginal mean).
pub fn sampler_moments(n: usize) -> Vec<MomentCheck> {
    let mut out = Vec::new();
    let gig = [
        (1.0, 1.0, -0.5),
        (0.5, 2.0, -40.0),
        (2.0, 3.0, 1.5),
        (0.1, 0.1, -3.0),
        (10.0, 0.2, 0.5),
        (0.05, 5.0, 4.0),
        (3.0, 0.05, -12.0),
        (1.0, 8.0, 0.0),
    ];
    for (i, &(chi, rho, lambda)) in gig.iter().enumerate() {
        let p = GiGParams::new(chi, rho, lambda).unwrap();
        let xs = draws(n, 1000 + i as u64, |r| sample_gig(&p, r));
        let label = format!("giG({chi}, {rho}, {lambda})");
        out.push(mean_check(format!("{label} mean"), &xs, gig_quadrature_moment(chi, rho, lambda, |x| x)));
        let inv: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
        out.push(mean_check(format!("{label} 1/x mean"), &inv, gig_quadrature_moment(chi, rho, lambda, |x| 1.0 / x)));
    }
    for (i, &(mu, lambda)) in [(1.0, 1.0), (2.0, 3.0), (0.05, 1.0), (5.0, 0.5)].iter().enumerate() {
        let p = InvGaussianParams::new(mu, lambda).unwrap();
        let xs = draws(n, 2000 + i as u64, |r| sample_inv_gaussian(&p, r));
        out.push(mean_check(format!("IG({mu}, {lambda}) mean"), &xs, mu));
        out.push(var_check(format!("IG({mu}, {lambda}) var"), &xs, mu * mu * mu / lambda));
    }
    for (i, &(a, b)) in [(0.3, 1.0), (1.0, 0.5), (4.5, 2.0), (0.05, 3.0)].iter().enumerate() {
        let p = GammaParams::new(a, b).unwrap();
        let xs = draws(n, 3000 + i as u64, |r| sample_gamma(&p, r));
        out.push(mean_check(format!("Ga({a}, {b}) mean"), &xs, a / b));
        out.push(var_check(format!("Ga({a}, {b}) var"), &xs, a / (b * b)));
    }
    let dirichlets: [&[f64]; 4] = [&[0.6, 0.6, 0.6], &[0.1, 1.0, 5.0, 0.3], &[2.0, 2.0], &[0.02, 0.05, 0.5, 1.0, 3.0]];
    for (i, alpha) in dirichlets.iter().enumerate() {
        let p = DirichletParams::new(alpha.to_vec()).unwrap();
        let mut rng = RngState::new(4000 + i as u64, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| sample_dirichlet(&p, &mut rng)).collect();
        let total: f64 = alpha.iter().sum();
        for (k, a) in alpha.iter().enumerate() {
            let xs: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            out.push(mean_check(format!("Dir({alpha:?}) component {k} mean"), &xs, a / total));
        }
    }
    out
}

/// Linear-Gaussian regression data `y = x w / sqrt(d) + b + N(0, noise_sd^2)`
/// with standard-normal inputs, in the network's parameterization.
pub struct ConjugateProblem {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub noise_var: f64,
}

pub fn conjugate_problem(n: usize, weights: &[f64], bias: f64, noise_sd: f64, seed: u64) -> ConjugateProblem {
    let mut rng = RngState::new(seed, 0);
    let d = weights.len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let mean = scale * row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + bias;
        y.push(mean + noise_sd * rng.standard_normal());
        x.push(row);
    }
    ConjugateProblem { x, y, noise_var: noise_sd * noise_sd }
}

impl ConjugateProblem {
    /// Posterior mean of `(w, b)` under independent `N(0, prior_var)` priors:
    /// `(Z^T Z / s^2 + I / prior_var)^-1 Z^T y / s^2` with `Z = [x / sqrt(d), 1]`,
    /// solved by Gaussian elimination with partial pivoting.
    pub fn posterior_mean(&self, prior_var: f64) -> Vec<f64> {
        let d = self.x[0].len();
        let k = d + 1;
        let scale = 1.0 / (d as f64).sqrt();
        let mut a = vec![vec![0.0; k + 1]; k];
        for (row, &y) in self.x.iter().zip(&self.y) {
            let z: Vec<f64> = row.iter().map(|v| v * scale).chain(std::iter::once(1.0)).collect();
            for i in 0..k {
                for j in 0..k {
                    a[i][j] += z[i] * z[j] / self.noise_var;
                }
                a[i][k] += z[i] * y / self.noise_var;
            }
        }
        for (i, r) in a.iter_mut().enumerate() {
            r[i] += 1.0 / prior_var;
        }
        for c in 0..k {
            let p = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            for r in c + 1..k {
                let f = a[r][c] / a[c][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
        let mut sol = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| a[i][j] * sol[j]).sum();
            sol[i] = (a[i][k] - s) / a[i][i];
        }
        sol
    }
}
