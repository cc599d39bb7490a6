//! Numerically stable scalar primitives shared by the likelihoods.

use libm::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(sigmoid(x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -log1p_exp(-x)
}

/// `(log σ(x), 1 − σ(x))` from a single exponential.
#[inline]
pub fn log_sigmoid_grad(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    if x >= 0.0 {
        (-e.ln_1p(), e / (1.0 + e))
    } else {
        (x - e.ln_1p(), 1.0 / (1.0 + e))
    }
}

/// `log(1 - exp(x))` for `x <= 0`.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

/// `log(exp(a) - exp(b))` for `a >= b`.
#[inline]
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + log1m_exp(b - a)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log(sigmoid(hi) - sigmoid(lo))` for `hi > lo`; either end may be infinite.
///
/// Uses `e^hi - e^lo = e^hi (1 - e^(lo - hi))` so no two probabilities are
/// ever subtracted.
pub fn log_diff_sigmoid(hi: f64, lo: f64) -> f64 {
    if lo == f64::NEG_INFINITY {
        return log_sigmoid(hi);
    }
    if hi == f64::INFINITY {
        return log_sigmoid(-lo);
    }
    hi + log1m_exp(lo - hi) - log1p_exp(hi) - log1p_exp(lo)
}

/// Partial derivatives of [`log_diff_sigmoid`] with respect to `(hi, lo)`.
pub fn log_diff_sigmoid_grad(hi: f64, lo: f64, value: f64) -> (f64, f64) {
    // d/dx sigmoid(x) = sigmoid(x) sigmoid(-x)
    let dens = |x: f64| -> f64 {
        if x.is_infinite() {
            0.0
        } else {
            (log_sigmoid(x) + log_sigmoid(-x) - value).exp()
        }
    };
    (dens(hi), -dens(lo))
}

#[inline]
pub fn log_normal_pdf_std(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Log of the standard normal CDF, accurate far into the lower tail.
pub fn log_ndtr(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x > 6.0 {
        // Phi(x) = 1 - Q(x), Q tiny
        let q = 0.5 * erfc(x / std::f64::consts::SQRT_2);
        return (-q).ln_1p();
    }
    if x > -20.0 {
        return (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln();
    }
    // asymptotic Mills ratio series
    let z2 = 1.0 / (x * x);
    let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2 + 105.0 * z2 * z2 * z2 * z2;
    log_normal_pdf_std(x) - (-x).ln() + series.ln()
}

/// `log(Phi(hi) - Phi(lo))` for `hi > lo`. When both arguments sit in the
/// upper half the complementary form `Q(lo) - Q(hi)` is used instead.
pub fn log_diff_ndtr(hi: f64, lo: f64) -> f64 {
    if lo == f64::NEG_INFINITY {
        return log_ndtr(hi);
    }
    if hi == f64::INFINITY {
        return log_ndtr(-lo);
    }
    if lo > 0.0 {
        log_diff_exp(log_ndtr(-lo), log_ndtr(-hi))
    } else {
        log_diff_exp(log_ndtr(hi), log_ndtr(lo))
    }
}

/// Partial derivatives of [`log_diff_ndtr`] with respect to `(hi, lo)`.
pub fn log_diff_ndtr_grad(hi: f64, lo: f64, value: f64) -> (f64, f64) {
    let dens = |x: f64| -> f64 {
        if x.is_infinite() {
            0.0
        } else {
            (log_normal_pdf_std(x) - value).exp()
        }
    };
    (dens(hi), -dens(lo))
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Exactly rounded floating-point summation (Shewchuk partials).
///
/// The result is the correctly rounded value of the exact sum, so it does not
/// depend on the order in which terms are added.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    special: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // half-even correction, as in Python's math.fsum
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = ExactSum::new();
    acc.extend(values);
    acc.value()
}

/// Empirical quantile with linear interpolation between order statistics
/// (type 7). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (1-based), ties share the mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            out[k] = r;
        }
        start = end;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}
