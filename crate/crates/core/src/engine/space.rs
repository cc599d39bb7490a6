//! Constrained parameter blocks and their maps to and from unconstrained
//! coordinates.

use std::ops::{Add, Mul, Neg, Range, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log1p_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    Free,
    /// Elementwise `exp`.
    Positive,
    /// First coordinate free, then cumulative `exp` increments.
    OrderedIncreasing,
    /// Cholesky factor of a `K x K` correlation matrix (unit-norm rows),
    /// built from `K(K-1)/2` tanh-mapped canonical partial correlations.
    CorrelationCholesky,
    /// Positive vector whose product is one; `n - 1` free log coordinates.
    UnitScaledPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub constraint: Constraint,
    pub unconstrained: Range<usize>,
    pub constrained: Range<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.constrained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constrained.is_empty()
    }

    /// Element names with 1-based indices, e.g. `theta[3,2]`.
    pub fn element_names(&self) -> Vec<String> {
        if self.shape.is_empty() {
            return vec![self.name.clone()];
        }
        let total: usize = self.shape.iter().product();
        (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut idx = vec![0; self.shape.len()];
                for d in (0..self.shape.len()).rev() {
                    idx[d] = rem % self.shape[d] + 1;
                    rem /= self.shape[d];
                }
                let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                format!("{}[{}]", self.name, parts.join(","))
            })
            .collect()
    }
}

/// Ordered list of named parameter blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    blocks: Vec<Block>,
    unconstrained_dim: usize,
    constrained_dim: usize,
}

fn corr_dim(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

impl ParameterSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block. For `CorrelationCholesky` the shape is `[K, K]`; a
    /// scalar block has an empty shape.
    pub fn push(&mut self, name: &str, shape: &[usize], constraint: Constraint) -> &Block {
        let n: usize = shape.iter().product();
        let u_len = match constraint {
            Constraint::CorrelationCholesky => {
                assert!(
                    shape.len() == 2 && shape[0] == shape[1],
                    "correlation Cholesky blocks are square"
                );
                corr_dim(shape[0])
            }
            Constraint::UnitScaledPositive => n.saturating_sub(1),
            _ => n,
        };
        let block = Block {
            name: name.to_string(),
            shape: shape.to_vec(),
            constraint,
            unconstrained: self.unconstrained_dim..self.unconstrained_dim + u_len,
            constrained: self.constrained_dim..self.constrained_dim + n,
        };
        self.unconstrained_dim += u_len;
        self.constrained_dim += n;
        self.blocks.push(block);
        self.blocks.last().unwrap()
    }

    pub fn with(mut self, name: &str, shape: &[usize], constraint: Constraint) -> Self {
        self.push(name, shape, constraint);
        self
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn unconstrained_dim(&self) -> usize {
        self.unconstrained_dim
    }

    pub fn constrained_dim(&self) -> usize {
        self.constrained_dim
    }

    pub fn names(&self) -> Vec<String> {
        self.blocks.iter().flat_map(|b| b.element_names()).collect()
    }

    pub fn transform(&self, unconstrained: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_len(unconstrained.len(), self.unconstrained_dim)?;
        let mut c = vec![0.0; self.constrained_dim];
        let lj = self.transform_into(unconstrained, &mut c);
        Ok((c, lj))
    }

    /// Allocation-free transform; returns the log absolute Jacobian.
    pub fn transform_into(&self, u: &[f64], c: &mut [f64]) -> f64 {
        let mut log_jac = 0.0;
        for b in &self.blocks {
            let ub = &u[b.unconstrained.clone()];
            let cb = &mut c[b.constrained.clone()];
            log_jac += match b.constraint {
                Constraint::Free => {
                    cb.copy_from_slice(ub);
                    0.0
                }
                Constraint::Positive => {
                    for (ci, ui) in cb.iter_mut().zip(ub) {
                        *ci = ui.exp();
                    }
                    ub.iter().sum()
                }
                Constraint::OrderedIncreasing => {
                    if cb.is_empty() {
                        0.0
                    } else {
                        cb[0] = ub[0];
                        for k in 1..cb.len() {
                            cb[k] = cb[k - 1] + ub[k].exp();
                        }
                        ub[1..].iter().sum()
                    }
                }
                Constraint::UnitScaledPositive => {
                    let n = cb.len();
                    if n == 0 {
                        0.0
                    } else {
                        let s: f64 = ub.iter().sum();
                        for k in 0..n - 1 {
                            cb[k] = ub[k].exp();
                        }
                        cb[n - 1] = (-s).exp();
                        s
                    }
                }
                Constraint::CorrelationCholesky => corr_cholesky_forward(b.shape[0], ub, cb),
            };
        }
        log_jac
    }

    pub fn untransform(&self, constrained: &[f64]) -> Result<Vec<f64>> {
        self.check_len(constrained.len(), self.constrained_dim)?;
        let mut u = vec![0.0; self.unconstrained_dim];
        for b in &self.blocks {
            let cb = &constrained[b.constrained.clone()];
            let ub = &mut u[b.unconstrained.clone()];
            match b.constraint {
                Constraint::Free => ub.copy_from_slice(cb),
                Constraint::Positive => {
                    for (ui, ci) in ub.iter_mut().zip(cb) {
                        if *ci <= 0.0 {
                            return Err(Error::Domain(format!("{}: {ci} is not positive", b.name)));
                        }
                        *ui = ci.ln();
                    }
                }
                Constraint::OrderedIncreasing => {
                    if !cb.is_empty() {
                        ub[0] = cb[0];
                        for k in 1..cb.len() {
                            let gap = cb[k] - cb[k - 1];
                            if gap <= 0.0 {
                                return Err(Error::Domain(format!("{} is not increasing", b.name)));
                            }
                            ub[k] = gap.ln();
                        }
                    }
                }
                Constraint::UnitScaledPositive => {
                    for (k, ui) in ub.iter_mut().enumerate() {
                        if cb[k] <= 0.0 {
                            return Err(Error::Domain(format!("{} is not positive", b.name)));
                        }
                        *ui = cb[k].ln();
                    }
                }
                Constraint::CorrelationCholesky => corr_cholesky_inverse(b.shape[0], cb, ub)
                    .map_err(|m| Error::Domain(format!("{}: {m}", b.name)))?,
            }
        }
        Ok(u)
    }

    /// Accumulates `J^T grad_c + d(log|J|)/du` into `grad_u`.
    pub fn backprop(&self, u: &[f64], c: &[f64], grad_c: &[f64], grad_u: &mut [f64]) {
        for b in &self.blocks {
            let ub = &u[b.unconstrained.clone()];
            let cb = &c[b.constrained.clone()];
            let gc = &grad_c[b.constrained.clone()];
            let gu = &mut grad_u[b.unconstrained.clone()];
            match b.constraint {
                Constraint::Free => {
                    for (g, x) in gu.iter_mut().zip(gc) {
                        *g += x;
                    }
                }
                Constraint::Positive => {
                    for k in 0..gu.len() {
                        gu[k] += gc[k] * cb[k] + 1.0;
                    }
                }
                Constraint::OrderedIncreasing => {
                    let n = cb.len();
                    let mut tail = 0.0;
                    for k in (0..n).rev() {
                        tail += gc[k];
                        if k == 0 {
                            gu[0] += tail;
                        } else {
                            gu[k] += tail * ub[k].exp() + 1.0;
                        }
                    }
                }
                Constraint::UnitScaledPositive => {
                    let n = cb.len();
                    if n > 0 {
                        let last = gc[n - 1] * cb[n - 1];
                        for k in 0..n - 1 {
                            gu[k] += gc[k] * cb[k] - last + 1.0;
                        }
                    }
                }
                Constraint::CorrelationCholesky => corr_cholesky_backprop(b.shape[0], ub, gc, gu),
            }
        }
    }

    /// True when every block satisfies its constraint (to rounding).
    pub fn satisfies(&self, c: &[f64]) -> bool {
        self.blocks.iter().all(|b| {
            let cb = &c[b.constrained.clone()];
            match b.constraint {
                Constraint::Free => cb.iter().all(|x| x.is_finite()),
                Constraint::Positive | Constraint::UnitScaledPositive => cb.iter().all(|&x| x > 0.0),
                Constraint::OrderedIncreasing => cb.windows(2).all(|w| w[0] < w[1]),
                Constraint::CorrelationCholesky => {
                    let k = b.shape[0];
                    (0..k).all(|i| {
                        let row = &cb[i * k..(i + 1) * k];
                        let upper_zero = row[i + 1..].iter().all(|&x| x == 0.0);
                        let norm: f64 = row.iter().map(|x| x * x).sum();
                        upper_zero && (norm - 1.0).abs() < 1e-8 && row[i] > 0.0
                    })
                }
            }
        })
    }

    fn check_len(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!("expected {want} values, got {got}")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Correlation Cholesky transform, generic so it can run on dual numbers.
// ---------------------------------------------------------------------------

trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn cst(x: f64) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn ln(self) -> Self;
    /// `log(1 - tanh(self)^2)`, computed without cancellation.
    fn log_sech2(self) -> Self;
}

impl Scalar for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn log_sech2(self) -> Self {
        let a = self.abs();
        2.0 * (std::f64::consts::LN_2 - a - log1p_exp(-2.0 * a))
    }
}

/// Forward-mode dual number.
#[derive(Debug, Clone, Copy)]
struct Dual {
    v: f64,
    d: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: -self.d }
    }
}

impl Scalar for Dual {
    fn cst(x: f64) -> Self {
        Dual { v: x, d: 0.0 }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual { v: s, d: if s > 0.0 { self.d / (2.0 * s) } else { 0.0 } }
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        Dual { v: t, d: self.d * (1.0 - t * t) }
    }
    fn ln(self) -> Self {
        Dual { v: self.v.ln(), d: self.d / self.v }
    }
    fn log_sech2(self) -> Self {
        Dual { v: self.v.log_sech2(), d: -2.0 * self.v.tanh() * self.d }
    }
}

/// Fills the row-major `k x k` factor from `k(k-1)/2` unconstrained values
/// and returns the log Jacobian of the map onto the strictly lower entries.
fn corr_cholesky_generic<T: Scalar>(k: usize, y: &[T], l: &mut [T]) -> T {
    let mut log_jac = T::cst(0.0);
    for v in l.iter_mut() {
        *v = T::cst(0.0);
    }
    if k == 0 {
        return log_jac;
    }
    l[0] = T::cst(1.0);
    let mut pos = 0;
    for i in 1..k {
        let mut sum_sq = T::cst(0.0);
        for j in 0..i {
            let z = y[pos].tanh();
            log_jac = log_jac + y[pos].log_sech2();
            pos += 1;
            if j == 0 {
                l[i * k] = z;
            } else {
                let remaining = T::cst(1.0) - sum_sq;
                log_jac = log_jac + T::cst(0.5) * remaining.ln();
                l[i * k + j] = z * remaining.sqrt();
            }
            sum_sq = sum_sq + l[i * k + j] * l[i * k + j];
        }
        l[i * k + i] = (T::cst(1.0) - sum_sq).sqrt();
    }
    log_jac
}

fn corr_cholesky_forward(k: usize, y: &[f64], l: &mut [f64]) -> f64 {
    corr_cholesky_generic(k, y, l)
}

fn corr_cholesky_backprop(k: usize, y: &[f64], grad_l: &[f64], grad_y: &mut [f64]) {
    let mut dy = vec![Dual::cst(0.0); y.len()];
    let mut dl = vec![Dual::cst(0.0); k * k];
    for t in 0..y.len() {
        for (s, (d, v)) in dy.iter_mut().zip(y).enumerate() {
            *d = Dual { v: *v, d: if s == t { 1.0 } else { 0.0 } };
        }
        let lj = corr_cholesky_generic(k, &dy, &mut dl);
        let dot: f64 = dl.iter().zip(grad_l).map(|(a, g)| a.d * g).sum();
        grad_y[t] += dot + lj.d;
    }
}

fn corr_cholesky_inverse(k: usize, l: &[f64], y: &mut [f64]) -> std::result::Result<(), String> {
    let mut pos = 0;
    for i in 1..k {
        let mut sum_sq = 0.0;
        for j in 0..i {
            let remaining = 1.0 - sum_sq;
            let z = if j == 0 { l[i * k] } else { l[i * k + j] / remaining.sqrt() };
            if !(z.abs() < 1.0) {
                return Err(format!("partial correlation {z} outside (-1, 1)"));
            }
            y[pos] = z.atanh();
            pos += 1;
            sum_sq += l[i * k + j] * l[i * k + j];
        }
    }
    Ok(())
}
