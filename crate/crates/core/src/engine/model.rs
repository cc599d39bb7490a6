use rand::Rng;

use super::space::ParameterSpace;

/// A differentiable posterior log density.
///
/// Implementors evaluate the density on constrained parameter values; the
/// provided [`log_density`](LogDensityModel::log_density) adds the transform
/// Jacobian and pulls the gradient back to unconstrained coordinates.
/// Evaluation must be reentrant: chains call it concurrently.
pub trait LogDensityModel: Send + Sync {
    fn space(&self) -> &ParameterSpace;

    /// Log density at constrained `params`; writes `d/dparams` into `grad`
    /// (which arrives zeroed).
    fn constrained_log_density(&self, params: &[f64], grad: &mut [f64]) -> f64;

    /// Log density (Jacobian included) and its gradient at an unconstrained
    /// point. `grad` is overwritten.
    fn log_density(&self, unconstrained: &[f64], grad: &mut [f64]) -> f64 {
        let space = self.space();
        let mut params = vec![0.0; space.constrained_dim()];
        let log_jac = space.transform_into(unconstrained, &mut params);
        let mut grad_c = vec![0.0; params.len()];
        let lp = self.constrained_log_density(&params, &mut grad_c);
        grad.iter_mut().for_each(|g| *g = 0.0);
        space.backprop(unconstrained, &params, &grad_c, grad);
        lp + log_jac
    }

    fn dim(&self) -> usize {
        self.space().unconstrained_dim()
    }

    /// Names of the quantities stored per draw. Defaults to the constrained
    /// parameters; models sampled on a reparameterized scale report their
    /// natural parameters here instead.
    fn output_names(&self) -> Vec<String> {
        self.space().names()
    }

    /// Maps constrained parameters to the values named by
    /// [`output_names`](LogDensityModel::output_names).
    fn write_output(&self, constrained: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(constrained);
    }
}

/// Worst per-coordinate gradient discrepancy found by [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub points: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
}

/// Compares the analytic gradient with central differences
/// (`h = 1e-5 (1 + |x|)`) at `points` uniform draws from `[-radius, radius]`.
///
/// Relative error per coordinate is `|a - fd| / max(1, |a|, |fd|)`.
pub fn gradient_check<M: LogDensityModel + ?Sized, R: Rng>(
    model: &M,
    points: usize,
    radius: f64,
    rng: &mut R,
) -> GradientCheck {
    let n = model.dim();
    let mut grad = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut worst = (0.0f64, 0usize);
    for _ in 0..points {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-radius..radius)).collect();
        model.log_density(&x, &mut grad);
        let mut xp = x.clone();
        for j in 0..n {
            let h = 1e-5 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let fp = model.log_density(&xp, &mut scratch);
            xp[j] = x[j] - h;
            let fm = model.log_density(&xp, &mut scratch);
            xp[j] = x[j];
            let fd = (fp - fm) / (2.0 * h);
            let err = (grad[j] - fd).abs() / 1f64.max(grad[j].abs()).max(fd.abs());
            if err > worst.0 || err.is_nan() {
                worst = (if err.is_nan() { f64::INFINITY } else { err }, j);
            }
        }
    }
    GradientCheck {
        points,
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
    }
}

/// Standard normal target of arbitrary dimension, mostly for tests.
#[derive(Debug, Clone)]
pub struct IsoGaussian {
    space: ParameterSpace,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl IsoGaussian {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Self {
        let space = ParameterSpace::new().with("x", &[mean.len()], super::Constraint::Free);
        Self { space, mean, sd }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }
}

impl LogDensityModel for IsoGaussian {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn constrained_log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..x.len() {
            let z = (x[i] - self.mean[i]) / self.sd[i];
            lp -= 0.5 * z * z;
            grad[i] = -z / self.sd[i];
        }
        lp
    }
}

/// Bivariate normal with unit variances and correlation `rho`.
#[derive(Debug, Clone)]
pub struct CorrelatedGaussian {
    space: ParameterSpace,
    rho: f64,
}

impl CorrelatedGaussian {
    pub fn new(rho: f64) -> Self {
        Self {
            space: ParameterSpace::new().with("x", &[2], super::Constraint::Free),
            rho,
        }
    }
}

impl LogDensityModel for CorrelatedGaussian {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn constrained_log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = 1.0 - self.rho * self.rho;
        let q = (x[0] * x[0] - 2.0 * self.rho * x[0] * x[1] + x[1] * x[1]) / d;
        grad[0] = -(x[0] - self.rho * x[1]) / d;
        grad[1] = -(x[1] - self.rho * x[0]) / d;
        -0.5 * q
    }
}

/// Neal's funnel: `v ~ N(0, 3)`, `x_k | v ~ N(0, exp(v/2))`.
#[derive(Debug, Clone)]
pub struct Funnel {
    space: ParameterSpace,
}

impl Funnel {
    pub fn new(dim: usize) -> Self {
        Self {
            space: ParameterSpace::new()
                .with("v", &[], super::Constraint::Free)
                .with("x", &[dim], super::Constraint::Free),
        }
    }
}

impl LogDensityModel for Funnel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn constrained_log_density(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let v = p[0];
        let mut lp = -v * v / 18.0;
        grad[0] = -v / 9.0;
        let inv_var = (-v).exp();
        for k in 1..p.len() {
            let x = p[k];
            lp += -0.5 * x * x * inv_var - 0.5 * v;
            grad[k] = -x * inv_var;
            grad[0] += 0.5 * x * x * inv_var - 0.5;
        }
        lp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_targets_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for model in [
            Box::new(IsoGaussian::new(vec![1.0, -2.0], vec![0.5, 3.0])) as Box<dyn LogDensityModel>,
            Box::new(CorrelatedGaussian::new(0.8)),
            Box::new(Funnel::new(3)),
        ] {
            let check = gradient_check(model.as_ref(), 20, 2.0, &mut rng);
            assert!(check.max_rel_error < 1e-6, "{check:?}");
        }
    }
}
