//! Prior log densities with their partial derivatives.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math::{ln_beta, LN_SQRT_2PI};

/// Normal log density and `(d/dx, d/dmu, d/dsigma)`.
#[inline]
pub fn normal(x: f64, mu: f64, sigma: f64) -> (f64, [f64; 3]) {
    let z = (x - mu) / sigma;
    let lp = -0.5 * z * z - sigma.ln() - LN_SQRT_2PI;
    let dx = -z / sigma;
    (lp, [dx, -dx, (z * z - 1.0) / sigma])
}

/// Half-Cauchy(0, scale) log density on `x >= 0` and `d/dx`.
#[inline]
pub fn half_cauchy(x: f64, scale: f64) -> (f64, f64) {
    let r = x / scale;
    let lp = (2.0 / (PI * scale)).ln() - r.mul_add(r, 1.0).ln();
    (lp, -2.0 * x / (scale * scale + x * x))
}

/// Log-normal log density on `x > 0` and `d/dx`.
#[inline]
pub fn lognormal(x: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let lx = x.ln();
    let z = (lx - mu) / sigma;
    let lp = -0.5 * z * z - sigma.ln() - LN_SQRT_2PI - lx;
    (lp, -(1.0 + z / sigma) / x)
}

/// Log normalizing constant of the LKJ density over `k x k` correlation
/// matrices with shape `eta`.
pub fn lkj_log_normalizer(k: usize, eta: f64) -> f64 {
    let mut c = 0.0;
    for i in 1..k {
        let ki = (k - i) as f64;
        c += (2.0 * eta - 2.0 + ki) * ki * std::f64::consts::LN_2;
        let a = eta + (ki - 1.0) / 2.0;
        c += ki * ln_beta(a, a);
    }
    c
}

/// LKJ density of the correlation matrix `L L'` expressed on its Cholesky
/// factor (row-major `k x k`), including the Jacobian of `L -> L L'`.
/// Returns the log density and `d/dL` (only the diagonal is nonzero).
pub fn lkj_cholesky(l: &[f64], k: usize, eta: f64) -> (f64, Vec<f64>) {
    let mut lp = -lkj_log_normalizer(k, eta);
    let mut grad = vec![0.0; k * k];
    for i in 1..k {
        let expo = (k - i - 1) as f64 + 2.0 * eta - 2.0;
        let d = l[i * k + i];
        lp += expo * d.ln();
        grad[i * k + i] = expo / d;
    }
    (lp, grad)
}

/// Gradient pieces of a multivariate normal with covariance
/// `diag(sigma) L L' diag(sigma)`.
#[derive(Debug, Clone)]
pub struct MvnGrad {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Row-major `k x k`, lower triangle (diagonal included).
    pub l: Vec<f64>,
}

/// Scratch-free evaluation: writes the log density and accumulates the
/// gradient into the supplied slices.
pub fn mvn_cholesky_accumulate(
    x: &[f64],
    mu: &[f64],
    sigma: &[f64],
    l: &[f64],
    grad_x: &mut [f64],
    grad_mu: Option<&mut [f64]>,
    grad_sigma: &mut [f64],
    grad_l: &mut [f64],
) -> f64 {
    let k = x.len();
    let mut u = [0.0f64; 16];
    let mut w = [0.0f64; 16];
    let mut v = [0.0f64; 16];
    assert!(k <= 16, "mvn dimension limited to 16");
    let mut lp = -(k as f64) * LN_SQRT_2PI;
    for i in 0..k {
        u[i] = (x[i] - mu[i]) / sigma[i];
        lp -= sigma[i].ln() + l[i * k + i].ln();
    }
    // L w = u
    for i in 0..k {
        let mut s = u[i];
        for j in 0..i {
            s -= l[i * k + j] * w[j];
        }
        w[i] = s / l[i * k + i];
    }
    // L' v = w
    for i in (0..k).rev() {
        let mut s = w[i];
        for j in i + 1..k {
            s -= l[j * k + i] * v[j];
        }
        v[i] = s / l[i * k + i];
    }
    let mut sq = 0.0;
    for i in 0..k {
        sq += w[i] * w[i];
    }
    lp -= 0.5 * sq;
    for i in 0..k {
        grad_x[i] -= v[i] / sigma[i];
        grad_sigma[i] += (v[i] * u[i] - 1.0) / sigma[i];
        for j in 0..=i {
            grad_l[i * k + j] += v[i] * w[j];
        }
        grad_l[i * k + i] -= 1.0 / l[i * k + i];
    }
    if let Some(gm) = grad_mu {
        for i in 0..k {
            gm[i] += v[i] / sigma[i];
        }
    }
    lp
}

pub fn mvn_cholesky(x: &[f64], mu: &[f64], sigma: &[f64], l: &[f64]) -> (f64, MvnGrad) {
    let k = x.len();
    let mut g = MvnGrad {
        x: vec![0.0; k],
        mu: vec![0.0; k],
        sigma: vec![0.0; k],
        l: vec![0.0; k * k],
    };
    let lp = mvn_cholesky_accumulate(x, mu, sigma, l, &mut g.x, Some(&mut g.mu), &mut g.sigma, &mut g.l);
    (lp, g)
}

/// Prior families that can be evaluated on a raw value.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Normal { mu: f64, sigma: f64 },
    HalfCauchy { scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Value is a row-major Cholesky factor.
    LkjCholesky { eta: f64 },
    /// Value is the vector `x`; covariance `diag(sigma) L L' diag(sigma)`.
    MvnCholesky { mu: Vec<f64>, sigma: Vec<f64>, l: Vec<f64> },
}

pub fn prior_logpdf(prior: &Prior, value: &[f64]) -> Result<f64> {
    let scalar = || -> Result<f64> {
        match value {
            [x] if x.is_finite() => Ok(*x),
            _ => Err(Error::Domain(format!("expected one finite value, got {value:?}"))),
        }
    };
    match prior {
        Prior::Normal { mu, sigma } => Ok(normal(scalar()?, *mu, *sigma).0),
        Prior::HalfCauchy { scale } => {
            let x = scalar()?;
            if x < 0.0 {
                return Err(Error::Domain(format!("half-Cauchy support is [0, inf), got {x}")));
            }
            Ok(half_cauchy(x, *scale).0)
        }
        Prior::LogNormal { mu, sigma } => {
            let x = scalar()?;
            if x <= 0.0 {
                return Err(Error::Domain(format!("log-normal support is (0, inf), got {x}")));
            }
            Ok(lognormal(x, *mu, *sigma).0)
        }
        Prior::LkjCholesky { eta } => {
            let k = (value.len() as f64).sqrt() as usize;
            if k * k != value.len() || !is_corr_cholesky(value, k) {
                return Err(Error::Domain("not a correlation Cholesky factor".into()));
            }
            Ok(lkj_cholesky(value, k, *eta).0)
        }
        Prior::MvnCholesky { mu, sigma, l } => {
            let k = mu.len();
            if value.len() != k || sigma.len() != k || l.len() != k * k {
                return Err(Error::Shape("mvn dimensions disagree".into()));
            }
            if sigma.iter().any(|&s| s <= 0.0) || !is_corr_cholesky(l, k) {
                return Err(Error::Domain("invalid mvn scale or Cholesky factor".into()));
            }
            Ok(mvn_cholesky(value, mu, sigma, l).0)
        }
    }
}

fn is_corr_cholesky(l: &[f64], k: usize) -> bool {
    (0..k).all(|i| {
        let row = &l[i * k..(i + 1) * k];
        let norm: f64 = row.iter().map(|x| x * x).sum();
        row[i] > 0.0 && row[i + 1..].iter().all(|&x| x == 0.0) && (norm - 1.0).abs() < 1e-8
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Composite Simpson rule on [a, b].
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn normal_at_zero() {
        let v = prior_logpdf(&Prior::Normal { mu: 0.0, sigma: 1.0 }, &[0.0]).unwrap();
        assert_relative_eq!(v, -0.918_938_533_204_672_7, epsilon = 1e-15);
    }

    #[test]
    fn half_cauchy_closed_form_and_mass() {
        let v = prior_logpdf(&Prior::HalfCauchy { scale: 2.5 }, &[0.0]).unwrap();
        assert_relative_eq!(v, (2.0 / (PI * 2.5)).ln(), epsilon = 1e-15);
        assert!((v - -1.367_87).abs() < 1e-5);
        // substitute x = tan(t) * scale to integrate over [0, inf)
        let mass = simpson(
            |t: f64| {
                let x = 2.5 * t.tan();
                half_cauchy(x, 2.5).0.exp() * 2.5 / t.cos().powi(2)
            },
            0.0,
            PI / 2.0 - 1e-9,
            20_000,
        );
        assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
        assert!(prior_logpdf(&Prior::HalfCauchy { scale: 2.5 }, &[-0.1]).is_err());
    }

    #[test]
    fn lkj_eta_one_is_flat_for_k2() {
        let at = |rho: f64| {
            let l = [1.0, 0.0, rho, (1.0 - rho * rho).sqrt()];
            prior_logpdf(&Prior::LkjCholesky { eta: 1.0 }, &l).unwrap()
        };
        assert_relative_eq!(at(0.0), at(0.7), epsilon = 1e-14);
        assert_relative_eq!(at(-0.95), at(0.2), epsilon = 1e-14);
    }

    #[test]
    fn lkj_k2_integrates_to_one() {
        // For K = 2 the factor is determined by rho = L[1,0]; L[1,1] = sqrt(1-rho^2).
        // Density over rho is the Cholesky density times |d L / d rho| over the
        // free coordinate, which is 1.
        for &eta in &[1.0, 2.0, 4.0] {
            let mass = simpson(
                |rho: f64| {
                    let d = (1.0 - rho * rho).sqrt();
                    if d == 0.0 {
                        return 0.0;
                    }
                    lkj_cholesky(&[1.0, 0.0, rho, d], 2, eta).0.exp()
                },
                -1.0 + 1e-12,
                1.0 - 1e-12,
                20_000,
            );
            assert_relative_eq!(mass, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn mvn_matches_independent_normals_with_identity_factor() {
        let x = [0.3, -1.1, 2.0];
        let mu = [0.0, 0.5, 1.0];
        let sigma = [1.0, 2.0, 0.5];
        let l = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (lp, _) = mvn_cholesky(&x, &mu, &sigma, &l);
        let want: f64 = (0..3).map(|i| normal(x[i], mu[i], sigma[i]).0).sum();
        assert_relative_eq!(lp, want, epsilon = 1e-13);
    }

    #[test]
    fn mvn_gradient_matches_finite_differences() {
        let rho: f64 = 0.6;
        let x = vec![0.4, -0.3];
        let mu = vec![0.1, 0.2];
        let sigma = vec![1.5, 0.7];
        let l = vec![1.0, 0.0, rho, (1.0 - rho * rho).sqrt()];
        let (_, g) = mvn_cholesky(&x, &mu, &sigma, &l);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (mvn_cholesky(&xp, &mu, &sigma, &l).0 - mvn_cholesky(&xm, &mu, &sigma, &l).0) / (2.0 * h);
            assert_relative_eq!(g.x[i], fd, epsilon = 1e-7);
            let mut sp = sigma.clone();
            let mut sm = sigma.clone();
            sp[i] += h;
            sm[i] -= h;
            let fd = (mvn_cholesky(&x, &mu, &sp, &l).0 - mvn_cholesky(&x, &mu, &sm, &l).0) / (2.0 * h);
            assert_relative_eq!(g.sigma[i], fd, epsilon = 1e-7);
        }
        // treat lower entries of L as free
        for idx in [0usize, 2, 3] {
            let mut lp = l.clone();
            let mut lm = l.clone();
            lp[idx] += h;
            lm[idx] -= h;
            let fd = (mvn_cholesky(&x, &mu, &sigma, &lp).0 - mvn_cholesky(&x, &mu, &sigma, &lm).0) / (2.0 * h);
            assert_relative_eq!(g.l[idx], fd, epsilon = 1e-7);
        }
    }
}
