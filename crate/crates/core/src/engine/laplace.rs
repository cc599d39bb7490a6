//! Posterior mode by L-BFGS and a Gaussian (Laplace) approximation around it.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draws::DrawSet;
use super::model::LogDensityModel;
use super::nuts::chain_rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Convergence when the infinity norm of the gradient falls below this.
    pub grad_tolerance: f64,
    /// Also converged after three successive steps whose relative change in
    /// the objective is below this, provided the gradient norm is below the
    /// square root of `grad_tolerance`.
    pub f_tolerance: f64,
    pub history: usize,
    pub seed: u64,
    pub init_radius: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10000,
            grad_tolerance: 1e-6,
            f_tolerance: 1e-12,
            history: 20,
            seed: 1,
            init_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    /// Unconstrained coordinates of the mode.
    pub point: Vec<f64>,
    pub log_density: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes the unconstrained log density (Jacobian included) from `init`,
/// or from a uniform draw in `[-init_radius, init_radius]`.
pub fn find_mode<M: LogDensityModel + ?Sized>(
    model: &M,
    cfg: &OptimizerConfig,
    init: Option<&[f64]>,
) -> Result<Mode> {
    use rand::Rng;
    let n = model.dim();
    let mut rng = chain_rng(cfg.seed, 0);
    let mut x: Vec<f64> = match init {
        Some(v) => v.to_vec(),
        None => (0..n)
            .map(|_| {
                if cfg.init_radius > 0.0 {
                    rng.random_range(-cfg.init_radius..cfg.init_radius)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    let mut g = vec![0.0; n];
    // minimize f = -log p
    let eval = |x: &[f64], g: &mut [f64]| -> f64 {
        let lp = model.log_density(x, g);
        g.iter_mut().for_each(|v| *v = -*v);
        -lp
    };
    let mut f = eval(&x, &mut g);
    if !f.is_finite() {
        return Err(Error::Initialization {
            attempts: 1,
            reason: format!("log density {} at optimizer start", -f),
        });
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut g_new = vec![0.0; n];
    let mut flat = 0;
    for iter in 0..cfg.max_iterations {
        let gn = inf_norm(&g);
        if gn < cfg.grad_tolerance || (flat >= 3 && gn < cfg.grad_tolerance.sqrt()) {
            return Ok(Mode {
                point: x,
                log_density: -f,
                iterations: iter,
                grad_norm: gn,
            });
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &d);
            for j in 0..n {
                d[j] -= alpha[i] * y_hist[i][j];
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / gn.max(1.0)
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for j in 0..n {
                d[j] += (alpha[i] - beta) * s_hist[i][j];
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
        }
        // backtracking line search with the Armijo condition
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let fn_ = eval(&xn, &mut g_new);
            if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            // no descent possible at machine precision
            let gn = inf_norm(&g);
            if gn < cfg.grad_tolerance.sqrt() {
                return Ok(Mode {
                    point: x,
                    log_density: -f,
                    iterations: iter,
                    grad_norm: gn,
                });
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                grad_norm: gn,
                best: x,
            });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > cfg.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        if (f - fn_).abs() <= cfg.f_tolerance * f.abs().max(1.0) {
            flat += 1;
        } else {
            flat = 0;
        }
        x = xn;
        f = fn_;
        std::mem::swap(&mut g, &mut g_new);
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iterations,
        grad_norm: inf_norm(&g),
        best: x,
    })
}

/// Negative Hessian of the unconstrained log density by central differences
/// of the analytic gradient, symmetrized.
pub fn negative_hessian<M: LogDensityModel + ?Sized>(model: &M, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = 1e-5 * (1.0 + x[j].abs());
            let mut xp = x.to_vec();
            let mut gp = vec![0.0; n];
            let mut gm = vec![0.0; n];
            xp[j] = x[j] + h;
            model.log_density(&xp, &mut gp);
            xp[j] = x[j] - h;
            model.log_density(&xp, &mut gm);
            gp.iter().zip(&gm).map(|(a, b)| -(a - b) / (2.0 * h)).collect()
        })
        .collect();
    let mut m = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct Laplace {
    pub mode: Mode,
    /// Lower Cholesky factor of the covariance on the unconstrained scale.
    pub cov_cholesky: DMatrix<f64>,
    /// Diagonal jitter that was needed to make the precision positive definite.
    pub jitter: f64,
}

impl Laplace {
    pub fn fit<M: LogDensityModel + ?Sized>(
        model: &M,
        cfg: &OptimizerConfig,
        init: Option<&[f64]>,
    ) -> Result<Self> {
        let mode = find_mode(model, cfg, init)?;
        let precision = negative_hessian(model, &mode.point);
        let n = precision.nrows();
        let mut jitter = 0.0;
        let chol = loop {
            let mut p = precision.clone();
            for i in 0..n {
                p[(i, i)] += jitter;
            }
            if let Some(c) = p.cholesky() {
                break c;
            }
            jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
            if jitter > 1e6 {
                return Err(Error::Domain("Hessian at the mode is not negative definite".into()));
            }
        };
        let cov = chol.inverse();
        let cov_cholesky = cov
            .cholesky()
            .ok_or_else(|| Error::Domain("posterior covariance is not positive definite".into()))?
            .l();
        Ok(Self {
            mode,
            cov_cholesky,
            jitter,
        })
    }

    /// The mode itself as a single draw in output layout.
    pub fn mode_draw<M: LogDensityModel + ?Sized>(&self, model: &M) -> Result<DrawSet> {
        let (c, _) = model.space().transform(&self.mode.point)?;
        let mut o = Vec::new();
        model.write_output(&c, &mut o);
        DrawSet::point_mass(model.output_names(), &o, 1)
    }

    pub fn sd(&self) -> Vec<f64> {
        (0..self.cov_cholesky.nrows())
            .map(|i| self.cov_cholesky.row(i).norm())
            .collect()
    }

    /// Draws from the Gaussian approximation, mapped to the constrained scale.
    pub fn draws<M: LogDensityModel + ?Sized>(&self, model: &M, count: usize, seed: u64) -> Result<DrawSet> {
        let mut rng = chain_rng(seed, 0);
        let space = model.space();
        let n = self.mode.point.len();
        let mu = DVector::from_column_slice(&self.mode.point);
        let mut out = Vec::with_capacity(count);
        let mut c = vec![0.0; space.constrained_dim()];
        let mut o = Vec::new();
        for _ in 0..count {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let u = &mu + &self.cov_cholesky * z;
            space.transform_into(u.as_slice(), &mut c);
            model.write_output(&c, &mut o);
            out.push(o.clone());
        }
        DrawSet::new(model.output_names(), vec![out], Vec::new())
    }
}
