//! Rank-normalized split-Rhat and bulk effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::draws::DrawSet;
use crate::math::ranks;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Absent with fewer than two chains or for degenerate draws.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    /// Every draw identical; Rhat and ESS are undefined.
    pub degenerate: bool,
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        if half == 0 {
            out.push(c.clone());
            continue;
        }
        out.push(c[..half].to_vec());
        // drop the middle draw of odd-length chains
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let r = ranks(&flat);
    let s = flat.len() as f64;
    let normal = Normal::standard();
    let mut out = Vec::with_capacity(chains.len());
    let mut pos = 0;
    for c in chains {
        out.push(
            (0..c.len())
                .map(|i| normal.inverse_cdf((r[pos + i] - 0.375) / (s + 0.25)))
                .collect(),
        );
        pos += c.len();
    }
    out
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Potential scale reduction over already-split chains of equal length.
fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = n / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Split-Rhat; `rank_normalize` selects the rank-normalized variant.
pub fn split_rhat(chains: &[Vec<f64>], rank_normalize: bool) -> Option<f64> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let s = split(chains);
    Some(if rank_normalize {
        rhat_of(&self::rank_normalize(&s))
    } else {
        rhat_of(&s)
    })
}

/// Rank-normalized split-Rhat of the draws folded around their median,
/// sensitive to differences in chain scale rather than location.
fn folded_rhat(splits: &[Vec<f64>]) -> f64 {
    let mut flat: Vec<f64> = splits.iter().flatten().copied().collect();
    flat.sort_by(f64::total_cmp);
    let med = crate::math::quantile_sorted(&flat, 0.5);
    let folded: Vec<Vec<f64>> = splits
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    rhat_of(&rank_normalize(&folded))
}

/// Effective sample size from combined-chain autocorrelations, truncated
/// with Geyer's initial positive and monotone sequence.
pub fn ess(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min()?;
    if m == 0 || n < 4 {
        return None;
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(&c[..n])).collect();
    let mean_var_w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    if mean_var_w == 0.0 {
        return None;
    }
    let mut var_plus = mean_var_w * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
        var_plus += mean_var(&means).1;
    }
    let nf = n as f64;
    let acov = |lag: usize| -> f64 {
        let mut total = 0.0;
        for (c, (mu, _)) in chains.iter().zip(&stats) {
            let mut s = 0.0;
            for i in 0..n - lag {
                s += (c[i] - mu) * (c[i + lag] - mu);
            }
            total += s / nf;
        }
        total / m as f64
    };
    let rho = |lag: usize| 1.0 - (mean_var_w - acov(lag)) / var_plus;

    let mut pair_sums: Vec<f64> = Vec::new();
    let mut t = 0;
    while t + 1 < n {
        let p = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if p < 0.0 {
            break;
        }
        pair_sums.push(p);
        t += 2;
    }
    for k in 1..pair_sums.len() {
        if pair_sums[k] > pair_sums[k - 1] {
            pair_sums[k] = pair_sums[k - 1];
        }
    }
    let tau = (-1.0 + 2.0 * pair_sums.iter().sum::<f64>()).max(1.0 / ((m * n) as f64).log10());
    let total = (m * n) as f64;
    Some((total / tau).min(total * total.log10()))
}

/// Rhat and bulk ESS for one parameter given its per-chain draws.
pub fn convergence(chains: &[Vec<f64>]) -> Convergence {
    let first = chains.iter().flatten().next().copied();
    let degenerate = match first {
        None => true,
        Some(v) => chains.iter().flatten().all(|&x| x == v),
    };
    if degenerate {
        return Convergence {
            rhat: None,
            ess: None,
            degenerate: true,
        };
    }
    let splits = split(chains);
    let z = rank_normalize(&splits);
    let rhat = if chains.len() >= 2 && chains.iter().all(|c| c.len() >= 4) {
        Some(rhat_of(&z).max(folded_rhat(&splits)))
    } else {
        None
    };
    Convergence {
        rhat,
        ess: ess(&z),
        degenerate: false,
    }
}

pub(crate) fn diagnose_columns(d: &DrawSet) -> Vec<Convergence> {
    use rayon::prelude::*;
    (0..d.n_params())
        .into_par_iter()
        .map(|p| {
            let chains: Vec<Vec<f64>> = (0..d.n_chains()).map(|c| d.chain_column(p, c)).collect();
            convergence(&chains)
        })
        .collect()
}

/// Per-parameter split-Rhat and bulk ESS, aligned with `d.names()`.
pub fn diagnostics(d: &DrawSet) -> Vec<Convergence> {
    diagnose_columns(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn iid_rhat_near_one() {
        let c = convergence(&iid_chains(4, 1000, 11));
        let r = c.rhat.unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");
        let e = c.ess.unwrap();
        assert!(e > 2500.0, "{e}");
    }

    #[test]
    fn disjoint_chains_hand_computed() {
        // halves [0,1],[0,1],[10,11],[10,11]: B = 200/3, W = 1/2,
        // var+ = W/2 + B/2, Rhat = sqrt(var+/W)
        let chains = vec![vec![0.0, 1.0, 0.0, 1.0], vec![10.0, 11.0, 10.0, 11.0]];
        let want = ((0.25 + 100.0 / 3.0) / 0.5f64).sqrt();
        let got = split_rhat(&chains, false).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got > 2.0);
    }

    #[test]
    fn constant_chains_at_different_levels() {
        // every split half is constant: W = 0 while B > 0
        let chains = vec![vec![0.0; 8], vec![10.0; 8]];
        assert_eq!(split_rhat(&chains, false), Some(f64::INFINITY));
        let c = convergence(&chains);
        assert!(!c.degenerate);
        assert!(c.rhat.unwrap() > 2.0);
    }

    #[test]
    fn shifted_chains_flagged() {
        let mut chains = iid_chains(2, 500, 5);
        chains[1].iter_mut().for_each(|x| *x += 10.0);
        assert!(split_rhat(&chains, false).unwrap() > 2.0);
        // rank normalization caps separated chains near 1.83
        let r = convergence(&chains).rhat.unwrap();
        assert!(r > 1.5 && r < 1.9, "{r}");
    }

    #[test]
    fn constant_chain_degenerate() {
        let c = convergence(&[vec![3.0; 100], vec![3.0; 100]]);
        assert!(c.degenerate);
        assert!(c.rhat.is_none() && c.ess.is_none());
    }

    #[test]
    fn single_chain_has_ess_but_no_rhat() {
        let c = convergence(&iid_chains(1, 400, 2));
        assert!(c.rhat.is_none());
        assert!(c.ess.unwrap() > 200.0);
    }

    #[test]
    fn autocorrelated_chain_has_lower_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = 0.0f64;
        let chain: Vec<f64> = (0..2000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = 0.9 * x + e;
                x
            })
            .collect();
        // AR(1) with phi = 0.9: ESS/N ~ (1 - phi) / (1 + phi) ~ 0.053
        let e = ess(&[chain]).unwrap();
        assert!(e > 40.0 && e < 250.0, "{e}");
    }
}
