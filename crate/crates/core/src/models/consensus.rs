//! Latent trait consensus models on the ordinal conclusiveness scale.

use serde::{Deserialize, Serialize};

use super::rasch::SCALE_PRIOR;
use super::{compact_categorical, log_normalize, ObservationModel};
use crate::data::CategoricalData;
use crate::engine::priors::{half_cauchy, lognormal, normal};
use crate::engine::{Constraint, LogDensityModel, ParameterSpace};
use crate::error::{Error, Result};
use crate::math::{log_diff_ndtr, log_diff_ndtr_grad, log_diff_sigmoid, log_diff_sigmoid_grad, ExactSum};

pub const LOCATION_PRIOR_SD: f64 = 2.0;
pub const SCALE_BIAS_SD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConsensusVariant {
    /// Probit link with examiner competence and item difficulty.
    Ltrm,
    /// Cumulative logits.
    Cltrm,
    /// Adjacent-category logits.
    Altrm,
}

impl ConsensusVariant {
    pub const ALL: [Self; 3] = [Self::Ltrm, Self::Cltrm, Self::Altrm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ltrm => "ltrm",
            Self::Cltrm => "cltrm",
            Self::Altrm => "altrm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "ltrm" => Some(Self::Ltrm),
            "cltrm" => Some(Self::Cltrm),
            "altrm" => Some(Self::Altrm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusParams {
    pub t: Vec<f64>,
    pub gamma: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Competence, LTRM only.
    pub e: Option<Vec<f64>>,
    /// Item difficulty, LTRM only.
    pub lambda: Option<Vec<f64>>,
}

/// Examiner thresholds `δ_c = a γ_c + b`.
pub fn thresholds(a: f64, b: f64, gamma: &[f64]) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("scale bias {a} must be positive")));
    }
    Ok(gamma.iter().map(|g| a * g + b).collect())
}

fn bound(delta: &[f64], c: usize) -> (f64, f64) {
    let hi = if c < delta.len() { delta[c] } else { f64::INFINITY };
    let lo = if c == 0 { f64::NEG_INFINITY } else { delta[c - 1] };
    (hi, lo)
}

/// Log probability of each category for one cell. `sqrt_tau` only affects
/// the LTRM.
pub fn cell_logprobs(variant: ConsensusVariant, t: f64, delta: &[f64], sqrt_tau: f64, out: &mut [f64]) {
    match variant {
        ConsensusVariant::Ltrm => {
            for (c, slot) in out.iter_mut().enumerate() {
                let (hi, lo) = bound(delta, c);
                *slot = log_diff_ndtr((hi - t) * sqrt_tau, (lo - t) * sqrt_tau);
            }
        }
        ConsensusVariant::Cltrm => {
            for (c, slot) in out.iter_mut().enumerate() {
                let (hi, lo) = bound(delta, c);
                *slot = log_diff_sigmoid(hi - t, lo - t);
            }
        }
        ConsensusVariant::Altrm => {
            out[0] = 0.0;
            for c in 1..out.len() {
                out[c] = out[c - 1] + t - delta[c - 1];
            }
            log_normalize(out);
        }
    }
}

fn check(p: &ConsensusParams, data: &CategoricalData, variant: ConsensusVariant) -> Result<()> {
    let (n, j) = (data.n_examiners(), data.n_items());
    if p.t.len() != j || p.a.len() != n || p.b.len() != n {
        return Err(Error::Shape("consensus parameters disagree with the data".into()));
    }
    if p.gamma.len() + 1 != data.n_categories {
        return Err(Error::Shape(format!(
            "{} boundaries for {} categories",
            p.gamma.len(),
            data.n_categories
        )));
    }
    if p.gamma.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("category boundaries must increase".into()));
    }
    if variant == ConsensusVariant::Ltrm {
        match (&p.e, &p.lambda) {
            (Some(e), Some(l)) if e.len() == n && l.len() == j => {
                if e.iter().chain(l).any(|v| !(*v > 0.0)) {
                    return Err(Error::Domain("competence and item difficulty must be positive".into()));
                }
            }
            _ => return Err(Error::Shape("LTRM needs competence per examiner and difficulty per item".into())),
        }
    }
    Ok(())
}

fn loglik(p: &ConsensusParams, data: &CategoricalData, variant: ConsensusVariant) -> Result<f64> {
    check(p, data, variant)?;
    let deltas = p
        .a
        .iter()
        .zip(&p.b)
        .map(|(&a, &b)| thresholds(a, b, &p.gamma))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = vec![0.0; data.n_categories];
    let mut acc = ExactSum::new();
    for o in &data.obs {
        let sqrt_tau = match (&p.e, &p.lambda) {
            (Some(e), Some(l)) if variant == ConsensusVariant::Ltrm => (e[o.examiner] / l[o.item]).sqrt(),
            _ => 1.0,
        };
        cell_logprobs(variant, p.t[o.item], &deltas[o.examiner], sqrt_tau, &mut buf);
        acc.add(buf[o.category]);
    }
    Ok(acc.value())
}

/// Probit likelihood with precision `E_i / λ_j`.
pub fn ltrm_loglik(p: &ConsensusParams, data: &CategoricalData) -> Result<f64> {
    loglik(p, data, ConsensusVariant::Ltrm)
}

/// `P(Y <= c) = σ(δ_c − T)`.
pub fn cltrm_loglik(p: &ConsensusParams, data: &CategoricalData) -> Result<f64> {
    loglik(p, data, ConsensusVariant::Cltrm)
}

/// `log P(c) / P(c − 1) = T − δ_{c−1}`.
pub fn altrm_loglik(p: &ConsensusParams, data: &CategoricalData) -> Result<f64> {
    loglik(p, data, ConsensusVariant::Altrm)
}

pub fn consensus_loglik(p: &ConsensusParams, data: &CategoricalData, variant: ConsensusVariant) -> Result<f64> {
    loglik(p, data, variant)
}

#[derive(Debug, Clone)]
pub struct ConsensusModel {
    space: ParameterSpace,
    data: CategoricalData,
    variant: ConsensusVariant,
}

struct Layout {
    n: usize,
    j: usize,
    c: usize,
}

impl Layout {
    fn t(&self) -> usize {
        0
    }
    fn gamma(&self) -> usize {
        self.j
    }
    fn a(&self) -> usize {
        self.j + self.c - 1
    }
    fn b(&self) -> usize {
        self.a() + self.n
    }
    fn sigma_b(&self) -> usize {
        self.b() + self.n
    }
    fn e(&self) -> usize {
        self.sigma_b() + 1
    }
    fn lambda(&self) -> usize {
        self.e() + self.n
    }
}

/// Examiners and items without responses are dropped.
pub fn consensus_posterior(data: &CategoricalData, variant: ConsensusVariant) -> Result<ConsensusModel> {
    if data.obs.is_empty() {
        return Err(Error::EmptyData("no conclusiveness responses".into()));
    }
    if !(2..=9).contains(&data.n_categories) {
        return Err(Error::Domain("consensus scale needs between two and nine categories".into()));
    }
    let data = compact_categorical(data)?;
    let (n, j) = (data.n_examiners(), data.n_items());
    let mut space = ParameterSpace::new()
        .with("T", &[j], Constraint::Free)
        .with("gamma", &[data.n_categories - 1], Constraint::OrderedIncreasing)
        .with("a", &[n], Constraint::Positive)
        .with("z_b", &[n], Constraint::Free)
        .with("sigma_b", &[], Constraint::Positive);
    if variant == ConsensusVariant::Ltrm {
        space = space
            .with("E", &[n], Constraint::Positive)
            .with("lambda", &[j], Constraint::UnitScaledPositive);
    }
    Ok(ConsensusModel { space, data, variant })
}

impl ConsensusModel {
    pub fn data(&self) -> &CategoricalData {
        &self.data
    }

    pub fn variant(&self) -> ConsensusVariant {
        self.variant
    }

    fn layout(&self) -> Layout {
        Layout {
            n: self.data.n_examiners(),
            j: self.data.n_items(),
            c: self.data.n_categories,
        }
    }

    /// Reads natural parameters from a draw in output layout.
    pub fn unpack(&self, c: &[f64]) -> ConsensusParams {
        let l = self.layout();
        let ltrm = self.variant == ConsensusVariant::Ltrm;
        ConsensusParams {
            t: c[l.t()..l.gamma()].to_vec(),
            gamma: c[l.gamma()..l.a()].to_vec(),
            a: c[l.a()..l.b()].to_vec(),
            b: c[l.b()..l.sigma_b()].to_vec(),
            e: ltrm.then(|| c[l.e()..l.lambda()].to_vec()),
            lambda: ltrm.then(|| c[l.lambda()..l.lambda() + l.j].to_vec()),
        }
    }

    /// Constrained parameter vector for natural values; `b` is stored
    /// standardized by `sigma_b`.
    pub fn pack(&self, p: &ConsensusParams, sigma_b: f64) -> Vec<f64> {
        let mut c = p.t.clone();
        c.extend_from_slice(&p.gamma);
        c.extend_from_slice(&p.a);
        c.extend(p.b.iter().map(|b| b / sigma_b));
        c.push(sigma_b);
        if self.variant == ConsensusVariant::Ltrm {
            c.extend_from_slice(p.e.as_deref().unwrap_or(&[]));
            c.extend_from_slice(p.lambda.as_deref().unwrap_or(&[]));
        }
        c
    }

    fn sqrt_tau(&self, c: &[f64], l: &Layout, examiner: usize, item: usize) -> f64 {
        if self.variant == ConsensusVariant::Ltrm {
            (c[l.e() + examiner] / c[l.lambda() + item]).sqrt()
        } else {
            1.0
        }
    }
}

impl LogDensityModel for ConsensusModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn constrained_log_density(&self, c: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let ncat = l.c;
        let gamma = &c[l.gamma()..l.a()];
        let s_b = c[l.sigma_b()];
        let bias: Vec<f64> = c[l.b()..l.sigma_b()].iter().map(|z| s_b * z).collect();
        let mut d_bias = vec![0.0; l.n];
        let mut delta = vec![0.0; ncat - 1];
        let mut buf = vec![0.0; ncat];
        let mut lp = 0.0;
        for o in &self.data.obs {
            let (a, b) = (c[l.a() + o.examiner], bias[o.examiner]);
            for (d, g) in delta.iter_mut().zip(gamma) {
                *d = a * g + b;
            }
            let t = c[l.t() + o.item];
            // d/dT and d/dδ_m for this cell
            let mut d_t = 0.0;
            let mut d_delta = [0.0f64; 8];
            match self.variant {
                ConsensusVariant::Ltrm | ConsensusVariant::Cltrm => {
                    let s = self.sqrt_tau(c, &l, o.examiner, o.item);
                    let (hi, lo) = bound(&delta, o.category);
                    let (zh, zl) = ((hi - t) * s, (lo - t) * s);
                    let (v, dh, dl) = if self.variant == ConsensusVariant::Ltrm {
                        let v = log_diff_ndtr(zh, zl);
                        let (dh, dl) = log_diff_ndtr_grad(zh, zl, v);
                        (v, dh, dl)
                    } else {
                        let v = log_diff_sigmoid(zh, zl);
                        let (dh, dl) = log_diff_sigmoid_grad(zh, zl, v);
                        (v, dh, dl)
                    };
                    lp += v;
                    d_t -= (dh + dl) * s;
                    let mut d_s = 0.0;
                    if o.category < ncat - 1 {
                        d_delta[o.category] += dh * s;
                        d_s += dh * (hi - t);
                    }
                    if o.category > 0 {
                        d_delta[o.category - 1] += dl * s;
                        d_s += dl * (lo - t);
                    }
                    if self.variant == ConsensusVariant::Ltrm {
                        let e = c[l.e() + o.examiner];
                        let lam = c[l.lambda() + o.item];
                        grad[l.e() + o.examiner] += d_s * s / (2.0 * e);
                        grad[l.lambda() + o.item] -= d_s * s / (2.0 * lam);
                    }
                }
                ConsensusVariant::Altrm => {
                    cell_logprobs(ConsensusVariant::Altrm, t, &delta, 1.0, &mut buf);
                    lp += buf[o.category];
                    let mut mean_c = 0.0;
                    let mut tail = 0.0;
                    // P(Y > m) accumulated from the top
                    for cat in (1..ncat).rev() {
                        let p = buf[cat].exp();
                        mean_c += cat as f64 * p;
                        tail += p;
                        let m = cat - 1;
                        let observed_above = if o.category > m { 1.0 } else { 0.0 };
                        d_delta[m] = -(observed_above - tail);
                    }
                    d_t = o.category as f64 - mean_c;
                }
            }
            grad[l.t() + o.item] += d_t;
            for m in 0..ncat - 1 {
                let dd = d_delta[m];
                grad[l.gamma() + m] += a * dd;
                grad[l.a() + o.examiner] += gamma[m] * dd;
                d_bias[o.examiner] += dd;
            }
        }

        for i in 0..l.n {
            let z = c[l.b() + i];
            grad[l.b() + i] += s_b * d_bias[i] - z;
            grad[l.sigma_b()] += z * d_bias[i];
            lp -= 0.5 * z * z;
        }
        for jj in 0..l.j {
            let (v, d) = normal(c[l.t() + jj], 0.0, LOCATION_PRIOR_SD);
            lp += v;
            grad[l.t() + jj] += d[0];
        }
        for m in 0..ncat - 1 {
            let (v, d) = normal(gamma[m], 0.0, LOCATION_PRIOR_SD);
            lp += v;
            grad[l.gamma() + m] += d[0];
        }
        for i in 0..l.n {
            let (v, d) = lognormal(c[l.a() + i], 0.0, SCALE_BIAS_SD);
            lp += v;
            grad[l.a() + i] += d;
        }
        let (v, d) = half_cauchy(s_b, SCALE_PRIOR);
        lp += v;
        grad[l.sigma_b()] += d;
        if self.variant == ConsensusVariant::Ltrm {
            for idx in l.e()..l.lambda() + l.j {
                let (v, d) = lognormal(c[idx], 0.0, 1.0);
                lp += v;
                grad[idx] += d;
            }
        }
        lp
    }

    fn output_names(&self) -> Vec<String> {
        let l = self.layout();
        let mut names = self.space.names();
        for i in 0..l.n {
            names[l.b() + i] = format!("b[{}]", i + 1);
        }
        names
    }

    fn write_output(&self, c: &[f64], out: &mut Vec<f64>) {
        let l = self.layout();
        out.clear();
        out.extend_from_slice(c);
        for v in &mut out[l.b()..l.sigma_b()] {
            *v *= c[l.sigma_b()];
        }
    }
}

impl ObservationModel for ConsensusModel {
    fn n_obs(&self) -> usize {
        self.data.obs.len()
    }

    fn n_categories(&self, _obs: usize) -> usize {
        self.data.n_categories
    }

    fn observed(&self, obs: usize) -> usize {
        self.data.obs[obs].category
    }

    fn grouping(&self) -> String {
        "conclusiveness".into()
    }

    fn category_logprobs(&self, draw: &[f64], obs: usize, out: &mut [f64]) {
        let l = self.layout();
        let o = self.data.obs[obs];
        let (a, b) = (draw[l.a() + o.examiner], draw[l.b() + o.examiner]);
        let delta: Vec<f64> = draw[l.gamma()..l.a()].iter().map(|g| a * g + b).collect();
        let s = self.sqrt_tau(draw, &l, o.examiner, o.item);
        cell_logprobs(self.variant, draw[l.t() + o.item], &delta, s, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CategoricalObs, IdIndex};
    use crate::engine::gradient_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> CategoricalData {
        let mut obs = Vec::new();
        for e in 0..3 {
            for i in 0..4 {
                obs.push(CategoricalObs {
                    examiner: e,
                    item: i,
                    category: (e + i) % 3,
                });
            }
        }
        CategoricalData::new(
            IdIndex::from_ids(["a", "b", "c"]),
            IdIndex::from_ids(["w", "x", "y", "z"]),
            3,
            obs,
        )
        .unwrap()
    }

    fn params(rng: &mut ChaCha8Rng, ltrm: bool) -> ConsensusParams {
        let mut r = |m: usize, lo: f64, hi: f64| (0..m).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
        let mut gamma = r(2, -1.5, 1.5);
        gamma.sort_by(f64::total_cmp);
        ConsensusParams {
            t: r(4, -2.0, 2.0),
            gamma,
            a: r(3, 0.5, 2.0),
            b: r(3, -1.0, 1.0),
            e: ltrm.then(|| r(3, 0.3, 3.0)),
            lambda: ltrm.then(|| r(4, 0.3, 3.0)),
        }
    }

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(thresholds(1.0, 0.0, &[-0.4, 0.9]).unwrap(), vec![-0.4, 0.9]);
        assert_eq!(thresholds(2.0, 1.0, &[-1.0, 1.0]).unwrap(), vec![-1.0, 3.0]);
        assert!(thresholds(0.0, 1.0, &[-1.0, 1.0]).is_err());
    }

    #[test]
    fn ltrm_single_cell_normal_oracle() {
        let data = CategoricalData::new(
            IdIndex::from_ids(["a"]),
            IdIndex::from_ids(["x"]),
            3,
            vec![CategoricalObs { examiner: 0, item: 0, category: 1 }],
        )
        .unwrap();
        let p = ConsensusParams {
            t: vec![0.0],
            gamma: vec![-1.0, 1.0],
            a: vec![1.0],
            b: vec![0.0],
            e: Some(vec![1.0]),
            lambda: Some(vec![1.0]),
        };
        // Φ(1) − Φ(−1) = erf(1/√2)
        let want = libm::erf(std::f64::consts::FRAC_1_SQRT_2).ln();
        assert!((ltrm_loglik(&p, &data).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn ltrm_vanishing_noise_picks_containing_interval() {
        let mut out = [0.0; 3];
        cell_logprobs(ConsensusVariant::Ltrm, 0.2, &[-1.0, 1.0], 1e3, &mut out);
        assert!(out[1].exp() > 1.0 - 1e-12);
        cell_logprobs(ConsensusVariant::Ltrm, 1.4, &[-1.0, 1.0], 1e3, &mut out);
        assert!(out[2].exp() > 1.0 - 1e-12);
    }

    #[test]
    fn cltrm_with_unit_scale_is_graded_response() {
        let data = toy();
        let mut p = params(&mut ChaCha8Rng::seed_from_u64(1), false);
        p.a = vec![1.0; 3];
        let mut want = 0.0;
        for o in &data.obs {
            // graded response: P(Y > c) = 1 / (1 + exp(-(T - b - γ_c)))
            let above = |c: usize| -> f64 {
                if c == 0 {
                    return 1.0;
                }
                if c == 3 {
                    return 0.0;
                }
                let x = p.t[o.item] - p.b[o.examiner] - p.gamma[c - 1];
                1.0 / (1.0 + (-x).exp())
            };
            want += (above(o.category) - above(o.category + 1)).ln();
        }
        assert!((cltrm_loglik(&p, &data).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn altrm_with_unit_scale_is_rating_scale() {
        let data = toy();
        let mut p = params(&mut ChaCha8Rng::seed_from_u64(2), false);
        p.a = vec![1.0; 3];
        let mut want = 0.0;
        for o in &data.obs {
            // rating scale: numerator exp(Σ_{m<c} (T − b − γ_m))
            let theta = p.t[o.item];
            let num: Vec<f64> = (0..3)
                .map(|c| (0..c).map(|m| theta - p.b[o.examiner] - p.gamma[m]).sum::<f64>().exp())
                .collect();
            want += (num[o.category] / num.iter().sum::<f64>()).ln();
        }
        assert!((altrm_loglik(&p, &data).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn limits_and_symmetry() {
        let mut out = [0.0; 3];
        cell_logprobs(ConsensusVariant::Altrm, 0.0, &[0.0, 0.0], 1.0, &mut out);
        for v in out {
            assert!((v.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
        cell_logprobs(ConsensusVariant::Cltrm, -40.0, &[0.0, 1.0], 1.0, &mut out);
        assert!(out[0].exp() > 1.0 - 1e-15);
        for variant in [ConsensusVariant::Cltrm, ConsensusVariant::Altrm] {
            cell_logprobs(variant, 0.0, &[-1.0, 1.0], 1.0, &mut out);
            assert_eq!(crate::models::argmax(&out), 1, "{variant:?}");
        }
    }

    #[test]
    fn gradients_all_variants() {
        let data = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for variant in ConsensusVariant::ALL {
            let model = consensus_posterior(&data, variant).unwrap();
            let check = gradient_check(&model, 15, 1.2, &mut rng);
            assert!(check.max_rel_error < 1e-5, "{variant:?} {check:?}");
        }
    }

    #[test]
    fn density_matches_loglik_plus_priors() {
        let data = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for variant in ConsensusVariant::ALL {
            let model = consensus_posterior(&data, variant).unwrap();
            let u: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (c, _) = model.space().transform(&u).unwrap();
            let natural = |c: &[f64]| {
                let mut o = Vec::new();
                model.write_output(c, &mut o);
                model.unpack(&o)
            };
            let p = natural(&c);
            let ll = consensus_loglik(&p, &data, variant).unwrap();
            let mut g = vec![0.0; c.len()];
            let mut g2 = vec![0.0; c.len()];
            let full = model.constrained_log_density(&c, &mut g);
            // likelihood-only difference must not depend on T shift of priors: compare two points
            let mut c2 = c.clone();
            c2[0] += 0.1;
            let p2 = natural(&c2);
            let ll2 = consensus_loglik(&p2, &data, variant).unwrap();
            let full2 = model.constrained_log_density(&c2, &mut g2);
            let prior_delta = normal(c2[0], 0.0, LOCATION_PRIOR_SD).0 - normal(c[0], 0.0, LOCATION_PRIOR_SD).0;
            assert!(((full2 - full) - (ll2 - ll) - prior_delta).abs() < 1e-10, "{variant:?}");
        }
    }

    #[test]
    fn parse_and_shape_errors() {
        assert_eq!(ConsensusVariant::parse("C-LTRM"), Some(ConsensusVariant::Cltrm));
        let data = toy();
        let p = params(&mut ChaCha8Rng::seed_from_u64(5), false);
        assert!(ltrm_loglik(&p, &data).is_err());
        let empty = CategoricalData::new(data.examiners.clone(), data.items.clone(), 3, vec![]).unwrap();
        assert!(matches!(
            consensus_posterior(&empty, ConsensusVariant::Cltrm),
            Err(Error::EmptyData(_))
        ));
    }
}
