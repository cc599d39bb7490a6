//! Joint model of scored correctness and reported difficulty.

use serde::Serialize;

use super::rasch::{bernoulli_logit, MU_B_SD, SCALE_PRIOR};
use super::{block_columns, reindex, ObservationModel};
use crate::data::{CategoricalData, ScoredMatrix};
use crate::engine::priors::{half_cauchy, normal};
use crate::engine::{Constraint, DrawSet, LogDensityModel, ParameterSpace};
use crate::error::{Error, Result};
use crate::math::{log_diff_sigmoid, log_diff_sigmoid_grad, log_sigmoid, quantile_sorted, sigmoid, ExactSum};

pub const N_LEVELS: usize = 5;
pub const G_PRIOR_SD: f64 = 5.0;
pub const GAMMA_PRIOR_SD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub theta: Vec<f64>,
    pub b: Vec<f64>,
    pub mu_b: f64,
    pub sigma_theta: f64,
    pub sigma_b: f64,
    pub g: f64,
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub sigma_h: f64,
    pub sigma_f: f64,
    pub gamma: Vec<f64>,
}

fn check_ordered(gamma: &[f64]) -> Result<()> {
    if gamma.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain(format!("cutpoints {gamma:?} are not strictly increasing")));
    }
    Ok(())
}

fn bounds(gamma: &[f64], c: usize) -> (f64, f64) {
    let hi = if c < gamma.len() { gamma[c] } else { f64::INFINITY };
    let lo = if c == 0 { f64::NEG_INFINITY } else { gamma[c - 1] };
    (hi, lo)
}

/// `log P(X = c)` for zero-based category `c` under cumulative logits
/// `P(X <= c) = σ(γ_c − η)`.
pub fn ordered_logit_logprob(eta: f64, gamma: &[f64], c: usize) -> Result<f64> {
    check_ordered(gamma)?;
    if c > gamma.len() {
        return Err(Error::Domain(format!("category {c} outside 0..={}", gamma.len())));
    }
    let (hi, lo) = bounds(gamma, c);
    Ok(log_diff_sigmoid(hi - eta, lo - eta))
}

/// Log probability and its gradient in `(eta, gamma_{c}, gamma_{c-1})`.
#[inline]
fn ordered_logit_with_grad(eta: f64, gamma: &[f64], c: usize) -> (f64, f64, f64, f64) {
    let (hi, lo) = bounds(gamma, c);
    let v = log_diff_sigmoid(hi - eta, lo - eta);
    let (dh, dl) = log_diff_sigmoid_grad(hi - eta, lo - eta, v);
    (v, -(dh + dl), dh, dl)
}

pub fn ordered_logit_probs(eta: f64, gamma: &[f64]) -> Result<Vec<f64>> {
    (0..=gamma.len())
        .map(|c| ordered_logit_logprob(eta, gamma, c).map(f64::exp))
        .collect()
}

/// Rasch term over scored entries plus the ordered-logit term over
/// difficulty reports with `η = g(θ − b) + h + f`.
pub fn joint_loglik(p: &JointParams, scored: &ScoredMatrix, difficulty: &CategoricalData) -> Result<f64> {
    let (n, j) = (scored.n_examiners(), scored.n_items());
    if p.theta.len() != n || p.b.len() != j || p.h.len() != n || p.f.len() != j {
        return Err(Error::Shape("parameter lengths disagree with the data".into()));
    }
    if difficulty.n_examiners() != n || difficulty.n_items() != j {
        return Err(Error::Shape("difficulty reports use a different index".into()));
    }
    if p.gamma.len() + 1 != difficulty.n_categories {
        return Err(Error::Shape(format!(
            "{} cutpoints for {} categories",
            p.gamma.len(),
            difficulty.n_categories
        )));
    }
    check_ordered(&p.gamma)?;
    let mut acc = ExactSum::new();
    for e in &scored.entries {
        acc.add(bernoulli_logit(e.y, p.theta[e.examiner] - p.b[e.item]).0);
    }
    for o in &difficulty.obs {
        let eta = p.g * (p.theta[o.examiner] - p.b[o.item]) + p.h[o.examiner] + p.f[o.item];
        let (hi, lo) = bounds(&p.gamma, o.category);
        acc.add(log_diff_sigmoid(hi - eta, lo - eta));
    }
    Ok(acc.value())
}

#[derive(Debug, Clone)]
pub struct JointModel {
    space: ParameterSpace,
    scored: ScoredMatrix,
    difficulty: CategoricalData,
    n_levels: usize,
}

struct Layout {
    n: usize,
    j: usize,
}

impl Layout {
    fn theta(&self) -> usize {
        0
    }
    fn b(&self) -> usize {
        self.n
    }
    fn mu_b(&self) -> usize {
        self.n + self.j
    }
    fn sigma_theta(&self) -> usize {
        self.mu_b() + 1
    }
    fn sigma_b(&self) -> usize {
        self.mu_b() + 2
    }
    fn g(&self) -> usize {
        self.mu_b() + 3
    }
    fn h(&self) -> usize {
        self.g() + 1
    }
    fn f(&self) -> usize {
        self.h() + self.n
    }
    fn sigma_h(&self) -> usize {
        self.f() + self.j
    }
    fn sigma_f(&self) -> usize {
        self.sigma_h() + 1
    }
    fn gamma(&self) -> usize {
        self.sigma_f() + 1
    }
}

/// Builds the joint posterior. Examiners and items without scored responses
/// are dropped, along with their difficulty reports.
pub fn joint_posterior(scored: &ScoredMatrix, difficulty: &CategoricalData) -> Result<JointModel> {
    if scored.is_empty() {
        return Err(Error::EmptyData("no scored responses".into()));
    }
    if difficulty.n_categories < 2 {
        return Err(Error::Domain("difficulty scale needs at least two levels".into()));
    }
    let scored = scored.compact();
    let difficulty = reindex(difficulty, &scored.examiners, &scored.items)?;
    let (n, j) = (scored.n_examiners(), scored.n_items());
    let space = ParameterSpace::new()
        .with("z_theta", &[n], Constraint::Free)
        .with("z_b", &[j], Constraint::Free)
        .with("mu_b", &[], Constraint::Free)
        .with("sigma_theta", &[], Constraint::Positive)
        .with("sigma_b", &[], Constraint::Positive)
        .with("g", &[], Constraint::Free)
        .with("z_h", &[n], Constraint::Free)
        .with("z_f", &[j], Constraint::Free)
        .with("sigma_h", &[], Constraint::Positive)
        .with("sigma_f", &[], Constraint::Positive)
        .with("gamma", &[difficulty.n_categories - 1], Constraint::OrderedIncreasing);
    Ok(JointModel {
        space,
        n_levels: difficulty.n_categories,
        scored,
        difficulty,
    })
}

impl JointModel {
    pub fn scored(&self) -> &ScoredMatrix {
        &self.scored
    }

    pub fn difficulty(&self) -> &CategoricalData {
        &self.difficulty
    }

    fn layout(&self) -> Layout {
        Layout {
            n: self.scored.n_examiners(),
            j: self.scored.n_items(),
        }
    }

    /// Reads natural parameters from a draw in output layout.
    pub fn unpack(&self, c: &[f64]) -> JointParams {
        let l = self.layout();
        JointParams {
            theta: c[l.theta()..l.theta() + l.n].to_vec(),
            b: c[l.b()..l.b() + l.j].to_vec(),
            mu_b: c[l.mu_b()],
            sigma_theta: c[l.sigma_theta()],
            sigma_b: c[l.sigma_b()],
            g: c[l.g()],
            h: c[l.h()..l.h() + l.n].to_vec(),
            f: c[l.f()..l.f() + l.j].to_vec(),
            sigma_h: c[l.sigma_h()],
            sigma_f: c[l.sigma_f()],
            gamma: c[l.gamma()..l.gamma() + self.n_levels - 1].to_vec(),
        }
    }

    /// Constrained parameter vector for natural values; `theta`, `b`, `h`
    /// and `f` are stored standardized.
    pub fn pack(&self, p: &JointParams) -> Vec<f64> {
        let mut c: Vec<f64> = p.theta.iter().map(|v| v / p.sigma_theta).collect();
        c.extend(p.b.iter().map(|v| (v - p.mu_b) / p.sigma_b));
        c.extend_from_slice(&[p.mu_b, p.sigma_theta, p.sigma_b, p.g]);
        c.extend(p.h.iter().map(|v| v / p.sigma_h));
        c.extend(p.f.iter().map(|v| v / p.sigma_f));
        c.extend_from_slice(&[p.sigma_h, p.sigma_f]);
        c.extend_from_slice(&p.gamma);
        c
    }

    fn eta(&self, c: &[f64], examiner: usize, item: usize) -> f64 {
        let l = self.layout();
        c[l.g()] * (c[examiner] - c[l.b() + item]) + c[l.h() + examiner] + c[l.f() + item]
    }
}

impl LogDensityModel for JointModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn constrained_log_density(&self, c: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let (n, j) = (l.n, l.j);
        let natural = {
            let mut out = Vec::with_capacity(c.len());
            self.write_output(c, &mut out);
            out
        };
        let (theta, b) = (&natural[..n], &natural[l.b()..l.mu_b()]);
        let (h, f) = (&natural[l.h()..l.f()], &natural[l.f()..l.sigma_h()]);
        let mut d_theta = vec![0.0; n];
        let mut d_b = vec![0.0; j];
        let mut d_h = vec![0.0; n];
        let mut d_f = vec![0.0; j];
        let mut lp = 0.0;
        for e in &self.scored.entries {
            let (v, d) = bernoulli_logit(e.y, theta[e.examiner] - b[e.item]);
            lp += v;
            d_theta[e.examiner] += d;
            d_b[e.item] -= d;
        }
        let g = c[l.g()];
        let gamma = &c[l.gamma()..l.gamma() + self.n_levels - 1];
        for o in &self.difficulty.obs {
            let diff = theta[o.examiner] - b[o.item];
            let eta = g * diff + h[o.examiner] + f[o.item];
            let (v, d_eta, d_hi, d_lo) = ordered_logit_with_grad(eta, gamma, o.category);
            lp += v;
            d_theta[o.examiner] += d_eta * g;
            d_b[o.item] -= d_eta * g;
            grad[l.g()] += d_eta * diff;
            d_h[o.examiner] += d_eta;
            d_f[o.item] += d_eta;
            if o.category < gamma.len() {
                grad[l.gamma() + o.category] += d_hi;
            }
            if o.category > 0 {
                grad[l.gamma() + o.category - 1] += d_lo;
            }
        }
        let blocks = [
            (l.theta(), l.sigma_theta(), &d_theta),
            (l.b(), l.sigma_b(), &d_b),
            (l.h(), l.sigma_h(), &d_h),
            (l.f(), l.sigma_f(), &d_f),
        ];
        for (start, scale, d) in blocks {
            for (k, dk) in d.iter().enumerate() {
                let z = c[start + k];
                grad[start + k] += c[scale] * dk - z;
                grad[scale] += z * dk;
                lp -= 0.5 * z * z;
            }
        }
        grad[l.mu_b()] += d_b.iter().sum::<f64>();
        let (v, d) = normal(c[l.mu_b()], 0.0, MU_B_SD);
        lp += v;
        grad[l.mu_b()] += d[0];
        let (v, d) = normal(g, 0.0, G_PRIOR_SD);
        lp += v;
        grad[l.g()] += d[0];
        for (k, &x) in gamma.iter().enumerate() {
            let (v, d) = normal(x, 0.0, GAMMA_PRIOR_SD);
            lp += v;
            grad[l.gamma() + k] += d[0];
        }
        for idx in [l.sigma_theta(), l.sigma_b(), l.sigma_h(), l.sigma_f()] {
            let (v, d) = half_cauchy(c[idx], SCALE_PRIOR);
            lp += v;
            grad[idx] += d;
        }
        lp
    }

    fn output_names(&self) -> Vec<String> {
        let l = self.layout();
        let mut names = self.space.names();
        for (start, len, name) in [(l.theta(), l.n, "theta"), (l.b(), l.j, "b"), (l.h(), l.n, "h"), (l.f(), l.j, "f")] {
            for k in 0..len {
                names[start + k] = format!("{name}[{}]", k + 1);
            }
        }
        names
    }

    fn write_output(&self, c: &[f64], out: &mut Vec<f64>) {
        let l = self.layout();
        out.clear();
        out.extend_from_slice(c);
        for v in &mut out[l.theta()..l.b()] {
            *v *= c[l.sigma_theta()];
        }
        for v in &mut out[l.b()..l.mu_b()] {
            *v = c[l.mu_b()] + c[l.sigma_b()] * *v;
        }
        for v in &mut out[l.h()..l.f()] {
            *v *= c[l.sigma_h()];
        }
        for v in &mut out[l.f()..l.sigma_h()] {
            *v *= c[l.sigma_f()];
        }
    }
}

impl ObservationModel for JointModel {
    fn n_obs(&self) -> usize {
        self.scored.entries.len() + self.difficulty.obs.len()
    }

    fn n_categories(&self, obs: usize) -> usize {
        if obs < self.scored.entries.len() {
            2
        } else {
            self.n_levels
        }
    }

    fn observed(&self, obs: usize) -> usize {
        let s = self.scored.entries.len();
        if obs < s {
            self.scored.entries[obs].y as usize
        } else {
            self.difficulty.obs[obs - s].category
        }
    }

    fn grouping(&self) -> String {
        "scored+difficulty".into()
    }

    fn category_logprobs(&self, draw: &[f64], obs: usize, out: &mut [f64]) {
        let l = self.layout();
        let s = self.scored.entries.len();
        if obs < s {
            let e = self.scored.entries[obs];
            let eta = draw[e.examiner] - draw[l.b() + e.item];
            out[0] = log_sigmoid(-eta);
            out[1] = log_sigmoid(eta);
        } else {
            let o = self.difficulty.obs[obs - s];
            let eta = self.eta(draw, o.examiner, o.item);
            let gamma = &draw[l.gamma()..l.gamma() + self.n_levels - 1];
            for (cat, slot) in out.iter_mut().enumerate() {
                let (hi, lo) = bounds(gamma, cat);
                *slot = log_diff_sigmoid(hi - eta, lo - eta);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub kind: &'static str,
    pub id: String,
    pub mean: f64,
    #[serde(rename = "q2.5")]
    pub q2_5: f64,
    #[serde(rename = "q97.5")]
    pub q97_5: f64,
    pub excludes_zero: bool,
}

fn bias_rows(d: &DrawSet, block: &str, kind: &'static str, ids: &[String]) -> Result<Vec<BiasRow>> {
    let cols = block_columns(d, block, ids.len())?;
    Ok(cols
        .iter()
        .zip(ids)
        .map(|(&c, id)| {
            let mut col = d.column(c);
            col.sort_by(f64::total_cmp);
            let (lo, hi) = (quantile_sorted(&col, 0.025), quantile_sorted(&col, 0.975));
            BiasRow {
                kind,
                id: id.clone(),
                mean: col.iter().sum::<f64>() / col.len() as f64,
                q2_5: lo,
                q97_5: hi,
                excludes_zero: lo > 0.0 || hi < 0.0,
            }
        })
        .collect())
}

/// Examiner (`h`) and item (`f`) reporting-bias summaries with 95% intervals.
pub fn reporting_bias_report(d: &DrawSet, model: &JointModel) -> Result<Vec<BiasRow>> {
    let mut rows = bias_rows(d, "h", "examiner", model.scored.examiners.ids())?;
    rows.extend(bias_rows(d, "f", "item", model.scored.items.ids())?);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictedObserved {
    pub examiner_id: String,
    pub observed_score: f64,
    pub predicted_score: f64,
    pub observed_difficulty: Option<f64>,
    pub predicted_difficulty: Option<f64>,
}

/// Per-examiner observed vs posterior-mean predicted score and mean reported
/// difficulty level (1..=levels), over the examiner's observed cells.
pub fn predicted_vs_observed(d: &DrawSet, model: &JointModel) -> Result<Vec<PredictedObserved>> {
    if d.n_params() != model.space.constrained_dim() {
        return Err(Error::Mismatch("draws do not belong to this joint model".into()));
    }
    let n = model.scored.n_examiners();
    let l = model.layout();
    let mut obs_score = vec![(0.0, 0usize); n];
    for e in &model.scored.entries {
        obs_score[e.examiner].0 += e.y as f64;
        obs_score[e.examiner].1 += 1;
    }
    let mut obs_diff = vec![(0.0, 0usize); n];
    for o in &model.difficulty.obs {
        obs_diff[o.examiner].0 += (o.category + 1) as f64;
        obs_diff[o.examiner].1 += 1;
    }
    let mut pred_score = vec![0.0; n];
    let mut pred_diff = vec![0.0; n];
    for draw in d.draws() {
        for e in &model.scored.entries {
            pred_score[e.examiner] += sigmoid(draw[e.examiner] - draw[l.b() + e.item]);
        }
        let gamma = &draw[l.gamma()..l.gamma() + model.n_levels - 1];
        for o in &model.difficulty.obs {
            let eta = model.eta(draw, o.examiner, o.item);
            let mut expect = 0.0;
            for cat in 0..model.n_levels {
                let (hi, lo) = bounds(gamma, cat);
                expect += (cat + 1) as f64 * log_diff_sigmoid(hi - eta, lo - eta).exp();
            }
            pred_diff[o.examiner] += expect;
        }
    }
    let draws = d.n_draws() as f64;
    Ok((0..n)
        .map(|i| {
            let per = |sum: f64, count: usize| (count > 0).then(|| sum / count as f64);
            PredictedObserved {
                examiner_id: model.scored.examiners.id(i).to_string(),
                observed_score: per(obs_score[i].0, obs_score[i].1).unwrap_or(f64::NAN),
                predicted_score: per(pred_score[i] / draws, obs_score[i].1).unwrap_or(f64::NAN),
                observed_difficulty: per(obs_diff[i].0, obs_diff[i].1),
                predicted_difficulty: per(pred_diff[i] / draws, obs_diff[i].1),
            }
        })
        .collect())
}
