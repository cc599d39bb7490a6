//! Hierarchical Rasch model for scored responses.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use super::{block_columns, ObservationModel};
use crate::data::{Comparison, Mating, ResponseRecord, ScoredMatrix};
use crate::engine::priors::{half_cauchy, normal};
use crate::engine::{Constraint, DrawSet, LogDensityModel, ParameterSpace};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, log_sigmoid_grad, ExactSum};

pub const MU_B_SD: f64 = 10.0;
pub const SCALE_PRIOR: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RaschParams {
    pub theta: Vec<f64>,
    pub b: Vec<f64>,
    pub mu_b: f64,
    pub sigma_theta: f64,
    pub sigma_b: f64,
}

/// `log P(Y = y)` under the logistic link with logit `eta`, and its
/// derivative in `eta`.
#[inline]
pub fn bernoulli_logit(y: u8, eta: f64) -> (f64, f64) {
    if y == 1 {
        log_sigmoid_grad(eta)
    } else {
        let (v, d) = log_sigmoid_grad(-eta);
        (v, -d)
    }
}

/// Log-likelihood of the observed entries.
pub fn rasch_loglik(p: &RaschParams, m: &ScoredMatrix) -> Result<f64> {
    if p.theta.len() != m.n_examiners() || p.b.len() != m.n_items() {
        return Err(Error::Shape(format!(
            "parameters are {}x{}, matrix is {}x{}",
            p.theta.len(),
            p.b.len(),
            m.n_examiners(),
            m.n_items()
        )));
    }
    let mut acc = ExactSum::new();
    for e in &m.entries {
        acc.add(bernoulli_logit(e.y, p.theta[e.examiner] - p.b[e.item]).0);
    }
    Ok(acc.value())
}

/// Posterior over a compacted scored matrix.
#[derive(Debug, Clone)]
pub struct RaschModel {
    space: ParameterSpace,
    matrix: ScoredMatrix,
    dropped_examiners: usize,
    dropped_items: usize,
}

/// Builds the posterior; examiners and items without scored responses are
/// dropped from the parameter space.
pub fn rasch_posterior(m: &ScoredMatrix) -> Result<RaschModel> {
    if m.is_empty() {
        return Err(Error::EmptyData("no scored responses".into()));
    }
    let matrix = m.compact();
    let (n, j) = (matrix.n_examiners(), matrix.n_items());
    let space = ParameterSpace::new()
        .with("z_theta", &[n], Constraint::Free)
        .with("z_b", &[j], Constraint::Free)
        .with("mu_b", &[], Constraint::Free)
        .with("sigma_theta", &[], Constraint::Positive)
        .with("sigma_b", &[], Constraint::Positive);
    Ok(RaschModel {
        space,
        dropped_examiners: m.n_examiners() - n,
        dropped_items: m.n_items() - j,
        matrix,
    })
}

impl RaschModel {
    pub fn matrix(&self) -> &ScoredMatrix {
        &self.matrix
    }

    /// Examiners and items removed for lack of scored responses.
    pub fn dropped(&self) -> (usize, usize) {
        (self.dropped_examiners, self.dropped_items)
    }

    /// Reads natural parameters from a draw in output layout.
    pub fn unpack(&self, c: &[f64]) -> RaschParams {
        let (n, j) = (self.matrix.n_examiners(), self.matrix.n_items());
        RaschParams {
            theta: c[..n].to_vec(),
            b: c[n..n + j].to_vec(),
            mu_b: c[n + j],
            sigma_theta: c[n + j + 1],
            sigma_b: c[n + j + 2],
        }
    }

    /// Constrained parameter vector for natural values; `theta` and `b` are
    /// stored standardized.
    pub fn pack(&self, p: &RaschParams) -> Vec<f64> {
        let mut c: Vec<f64> = p.theta.iter().map(|t| t / p.sigma_theta).collect();
        c.extend(p.b.iter().map(|b| (b - p.mu_b) / p.sigma_b));
        c.extend_from_slice(&[p.mu_b, p.sigma_theta, p.sigma_b]);
        c
    }
}

impl LogDensityModel for RaschModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn constrained_log_density(&self, c: &[f64], grad: &mut [f64]) -> f64 {
        let (n, j) = (self.matrix.n_examiners(), self.matrix.n_items());
        let (z_theta, rest) = c.split_at(n);
        let (z_b, hyper) = rest.split_at(j);
        let (mu_b, s_theta, s_b) = (hyper[0], hyper[1], hyper[2]);
        let mut d_theta = vec![0.0; n];
        let mut d_b = vec![0.0; j];
        let mut lp = 0.0;
        for e in &self.matrix.entries {
            let eta = s_theta * z_theta[e.examiner] - mu_b - s_b * z_b[e.item];
            let (l, d) = bernoulli_logit(e.y, eta);
            lp += l;
            d_theta[e.examiner] += d;
            d_b[e.item] -= d;
        }
        for (i, (z, d)) in z_theta.iter().zip(&d_theta).enumerate() {
            grad[i] += s_theta * d - z;
            grad[n + j + 1] += z * d;
            lp -= 0.5 * z * z;
        }
        for (k, (z, d)) in z_b.iter().zip(&d_b).enumerate() {
            grad[n + k] += s_b * d - z;
            grad[n + j] += d;
            grad[n + j + 2] += z * d;
            lp -= 0.5 * z * z;
        }
        let (l, g) = normal(mu_b, 0.0, MU_B_SD);
        lp += l;
        grad[n + j] += g[0];
        for (idx, s) in [(n + j + 1, s_theta), (n + j + 2, s_b)] {
            let (l, g) = half_cauchy(s, SCALE_PRIOR);
            lp += l;
            grad[idx] += g;
        }
        lp
    }

    fn output_names(&self) -> Vec<String> {
        let (n, j) = (self.matrix.n_examiners(), self.matrix.n_items());
        let mut names: Vec<String> = (1..=n).map(|i| format!("theta[{i}]")).collect();
        names.extend((1..=j).map(|k| format!("b[{k}]")));
        names.extend(["mu_b", "sigma_theta", "sigma_b"].map(String::from));
        names
    }

    fn write_output(&self, c: &[f64], out: &mut Vec<f64>) {
        let (n, j) = (self.matrix.n_examiners(), self.matrix.n_items());
        let (mu_b, s_theta, s_b) = (c[n + j], c[n + j + 1], c[n + j + 2]);
        out.clear();
        out.extend(c[..n].iter().map(|z| s_theta * z));
        out.extend(c[n..n + j].iter().map(|z| mu_b + s_b * z));
        out.extend_from_slice(&c[n + j..]);
    }
}

impl ObservationModel for RaschModel {
    fn n_obs(&self) -> usize {
        self.matrix.entries.len()
    }

    fn n_categories(&self, _obs: usize) -> usize {
        2
    }

    fn observed(&self, obs: usize) -> usize {
        self.matrix.entries[obs].y as usize
    }

    fn grouping(&self) -> String {
        "scored".into()
    }

    fn category_logprobs(&self, draw: &[f64], obs: usize, out: &mut [f64]) {
        let n = self.matrix.n_examiners();
        let e = self.matrix.entries[obs];
        let eta = draw[e.examiner] - draw[n + e.item];
        out[0] = log_sigmoid(-eta);
        out[1] = log_sigmoid(eta);
    }
}

/// Observed per-examiner error counts from the raw records.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ExaminerErrors {
    false_pos: usize,
    nonmate_conclusive: usize,
    false_neg: usize,
    mate_conclusive: usize,
    responses: usize,
}

fn examiner_errors(records: &[ResponseRecord]) -> HashMap<&str, ExaminerErrors> {
    let mut out: HashMap<&str, ExaminerErrors> = HashMap::new();
    for r in records {
        let e = out.entry(r.examiner_id.as_str()).or_default();
        e.responses += 1;
        match (r.mating, r.compare_value) {
            (Mating::NonMates, Some(Comparison::Individualization)) => {
                e.false_pos += 1;
                e.nonmate_conclusive += 1;
            }
            (Mating::NonMates, Some(Comparison::Exclusion)) => e.nonmate_conclusive += 1,
            (Mating::Mates, Some(Comparison::Exclusion)) => {
                e.false_neg += 1;
                e.mate_conclusive += 1;
            }
            (Mating::Mates, Some(Comparison::Individualization)) => e.mate_conclusive += 1,
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProficiencyRow {
    pub examiner_id: String,
    pub theta_mean: f64,
    pub theta_median: f64,
    #[serde(rename = "q2.5")]
    pub q2_5: f64,
    #[serde(rename = "q97.5")]
    pub q97_5: f64,
    pub observed_score: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub n_conclusive: usize,
    pub n_responses: usize,
}

/// Joins posterior proficiency summaries with observed scores and error
/// rates. `m` is the matrix the model was fitted to
/// ([`RaschModel::matrix`]); `records` supply the error rates.
pub fn proficiency_report(d: &DrawSet, m: &ScoredMatrix, records: &[ResponseRecord]) -> Result<Vec<ProficiencyRow>> {
    let cols = block_columns(d, "theta", m.n_examiners())?;
    let errors = examiner_errors(records);
    let mut correct = vec![0usize; m.n_examiners()];
    let mut seen = vec![0usize; m.n_examiners()];
    for e in &m.entries {
        seen[e.examiner] += 1;
        correct[e.examiner] += e.y as usize;
    }
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok((0..m.n_examiners())
        .map(|i| {
            let mut col = d.column(cols[i]);
            col.sort_by(f64::total_cmp);
            let id = m.examiners.id(i);
            let err = errors.get(id).copied().unwrap_or_default();
            ProficiencyRow {
                examiner_id: id.to_string(),
                theta_mean: col.iter().sum::<f64>() / col.len() as f64,
                theta_median: crate::math::quantile_sorted(&col, 0.5),
                q2_5: crate::math::quantile_sorted(&col, 0.025),
                q97_5: crate::math::quantile_sorted(&col, 0.975),
                observed_score: if seen[i] > 0 {
                    correct[i] as f64 / seen[i] as f64
                } else {
                    f64::NAN
                },
                fpr: rate(err.false_pos, err.nonmate_conclusive),
                fnr: rate(err.false_neg, err.mate_conclusive),
                n_conclusive: err.nonmate_conclusive + err.mate_conclusive,
                n_responses: err.responses.max(seen[i]),
            }
        })
        .collect())
}

pub fn write_rows_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IdIndex, ScoredEntry};
    use crate::engine::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(n: usize, j: usize, cells: &[(usize, usize, u8)]) -> ScoredMatrix {
        let e = IdIndex::from_ids((0..n).map(|i| format!("e{i}")));
        let it = IdIndex::from_ids((0..j).map(|i| format!("i{i}")));
        let entries = cells
            .iter()
            .map(|&(examiner, item, y)| ScoredEntry { examiner, item, y })
            .collect();
        ScoredMatrix::new(e, it, entries).unwrap()
    }

    fn params(theta: Vec<f64>, b: Vec<f64>) -> RaschParams {
        RaschParams {
            theta,
            b,
            mu_b: 0.0,
            sigma_theta: 1.0,
            sigma_b: 1.0,
        }
    }

    #[test]
    fn single_cell_values() {
        let m = matrix(1, 1, &[(0, 0, 1)]);
        let v = rasch_loglik(&params(vec![0.3], vec![0.3]), &m).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        let v = rasch_loglik(&params(vec![1.0], vec![0.0]), &m).unwrap();
        // log(1 / (1 + e^-1))
        assert!((v - -0.313_261_687_518_222_8).abs() < 1e-15);
    }

    #[test]
    fn translation_invariant() {
        let m = matrix(2, 2, &[(0, 0, 1), (0, 1, 0), (1, 1, 1)]);
        let a = rasch_loglik(&params(vec![0.5, -0.25], vec![0.125, 1.0]), &m).unwrap();
        let b = rasch_loglik(&params(vec![2.5, 1.75], vec![2.125, 3.0]), &m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch() {
        let m = matrix(2, 2, &[(0, 0, 1)]);
        assert!(matches!(rasch_loglik(&params(vec![0.0], vec![0.0, 0.0]), &m), Err(Error::Shape(_))));
    }

    #[test]
    fn posterior_gradient() {
        let m = matrix(3, 3, &[(0, 0, 1), (0, 1, 0), (1, 1, 1), (2, 2, 0), (2, 0, 1)]);
        let model = rasch_posterior(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let check = gradient_check(&model, 20, 1.5, &mut rng);
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }

    #[test]
    fn empty_rejected_and_unused_dropped() {
        let m = matrix(2, 2, &[]);
        assert!(matches!(rasch_posterior(&m), Err(Error::EmptyData(_))));
        let m = matrix(3, 2, &[(0, 0, 1), (2, 0, 0)]);
        let model = rasch_posterior(&m).unwrap();
        assert_eq!(model.dropped(), (1, 1));
        assert_eq!(model.matrix().n_examiners(), 2);
    }
}
