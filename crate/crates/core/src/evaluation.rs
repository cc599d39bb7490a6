//! Error rates, WAIC, prediction error and posterior predictive score checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Comparison, LatentValue, Mating, ResponseRecord, ScoredMatrix};
use crate::engine::DrawSet;
use crate::error::{Error, Result};
use crate::math::{quantile_sorted, sigmoid, ExactSum};
use crate::models::{argmax, block_columns, ObservationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecisionCounts {
    pub no_value: usize,
    pub exclusion: usize,
    pub inconclusive: usize,
    pub individualization: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// False individualizations over conclusive non-mate decisions.
    pub fpr: Option<f64>,
    /// False exclusions over conclusive mate decisions.
    pub fnr: Option<f64>,
    pub false_positives: usize,
    pub nonmate_conclusive: usize,
    pub false_negatives: usize,
    pub mate_conclusive: usize,
    pub mates: DecisionCounts,
    pub nonmates: DecisionCounts,
}

pub fn error_rates(records: &[ResponseRecord]) -> ErrorRates {
    let mut mates = DecisionCounts::default();
    let mut nonmates = DecisionCounts::default();
    for r in records {
        let c = match r.mating {
            Mating::Mates => &mut mates,
            Mating::NonMates => &mut nonmates,
        };
        match (r.latent_value, r.compare_value) {
            (LatentValue::NV, _) | (_, None) => c.no_value += 1,
            (_, Some(Comparison::Exclusion)) => c.exclusion += 1,
            (_, Some(Comparison::Inconclusive)) => c.inconclusive += 1,
            (_, Some(Comparison::Individualization)) => c.individualization += 1,
        }
    }
    let nonmate_conclusive = nonmates.individualization + nonmates.exclusion;
    let mate_conclusive = mates.individualization + mates.exclusion;
    let rate = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    ErrorRates {
        fpr: rate(nonmates.individualization, nonmate_conclusive),
        fnr: rate(mates.exclusion, mate_conclusive),
        false_positives: nonmates.individualization,
        nonmate_conclusive,
        false_negatives: mates.exclusion,
        mate_conclusive,
        mates,
        nonmates,
    }
}

/// Per-observation log-likelihood values, row-major `[draw][obs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseLogLik {
    values: Vec<f64>,
    n_draws: usize,
    n_obs: usize,
}

impl PointwiseLogLik {
    pub fn new(values: Vec<f64>, n_draws: usize, n_obs: usize) -> Result<Self> {
        if values.len() != n_draws * n_obs {
            return Err(Error::Shape(format!(
                "{} values for {n_draws} draws x {n_obs} observations",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite log-likelihood {v}")));
        }
        Ok(Self { values, n_draws, n_obs })
    }

    /// Evaluates every draw of `d` against every observation of `model`.
    pub fn compute<M: ObservationModel + ?Sized>(model: &M, d: &DrawSet) -> Result<Self> {
        let n_obs = model.n_obs();
        let draws: Vec<&[f64]> = d.draws().collect();
        let rows: Vec<Vec<f64>> = draws
            .par_iter()
            .map(|draw| {
                let mut row = vec![0.0; n_obs];
                model.pointwise_loglik(draw, &mut row);
                row
            })
            .collect();
        Self::new(rows.concat(), draws.len(), n_obs)
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn get(&self, draw: usize, obs: usize) -> f64 {
        self.values[draw * self.n_obs + obs]
    }

    pub fn column(&self, obs: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_draws).map(move |s| self.get(s, obs))
    }
}

/// Running log-mean-exp and variance of one observation's log-likelihood
/// across draws.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointwiseAccumulator {
    count: usize,
    max: f64,
    /// `Σ exp(x − max)`
    scaled: f64,
    mean: f64,
    m2: f64,
}

impl PointwiseAccumulator {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        if x > self.max {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled += (x - self.max).exp();
        }
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// `log mean exp(x)`
    pub fn lppd(&self) -> f64 {
        self.max + self.scaled.ln() - (self.count as f64).ln()
    }

    /// Sample variance across draws.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub se: f64,
    pub lppd: f64,
    pub p_waic: f64,
    /// `−2 (lppd_i − p_i)` per observation.
    pub pointwise: Vec<f64>,
}

fn finish(stats: &[PointwiseAccumulator]) -> Waic {
    let mut lppd = ExactSum::new();
    let mut p = ExactSum::new();
    let pointwise: Vec<f64> = stats
        .iter()
        .map(|s| {
            let (l, v) = (s.lppd(), s.variance());
            lppd.add(l);
            p.add(v);
            -2.0 * (l - v)
        })
        .collect();
    let (lppd, p_waic) = (lppd.value(), p.value());
    Waic {
        waic: -2.0 * (lppd - p_waic),
        se: sum_se(&pointwise),
        lppd,
        p_waic,
        pointwise,
    }
}

/// `sqrt(n var(x))` with the sample variance.
fn sum_se(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (n as f64 * var).sqrt()
}

/// WAIC on the deviance scale from a stored pointwise matrix.
pub fn waic(p: &PointwiseLogLik) -> Result<Waic> {
    if p.n_draws < 2 {
        return Err(Error::Domain("WAIC needs at least two draws".into()));
    }
    let stats: Vec<PointwiseAccumulator> = (0..p.n_obs)
        .map(|o| {
            let mut acc = PointwiseAccumulator::new();
            p.column(o).for_each(|x| acc.push(x));
            acc
        })
        .collect();
    Ok(finish(&stats))
}

/// WAIC without materializing the draw x observation matrix: observations
/// are processed in parallel, each streaming over draws in order.
pub fn waic_streaming<M: ObservationModel + ?Sized>(model: &M, d: &DrawSet) -> Result<Waic> {
    if d.n_draws() < 2 {
        return Err(Error::Domain("WAIC needs at least two draws".into()));
    }
    let draws: Vec<&[f64]> = d.draws().collect();
    let stats: Vec<PointwiseAccumulator> = (0..model.n_obs())
        .into_par_iter()
        .map(|o| {
            let mut buf = vec![0.0; model.n_categories(o)];
            let obs = model.observed(o);
            let mut acc = PointwiseAccumulator::new();
            for draw in &draws {
                model.category_logprobs(draw, o, &mut buf);
                acc.push(buf[obs]);
            }
            acc
        })
        .collect();
    if let Some(o) = stats.iter().position(|s| !s.lppd().is_finite()) {
        return Err(Error::Domain(format!("observation {o} has zero likelihood under every draw")));
    }
    Ok(finish(&stats))
}

/// Difference `a − b` in WAIC and its standard error from paired pointwise
/// values.
pub fn waic_difference(a: &Waic, b: &Waic) -> Result<(f64, f64)> {
    if a.pointwise.len() != b.pointwise.len() {
        return Err(Error::Mismatch(format!(
            "{} vs {} observations",
            a.pointwise.len(),
            b.pointwise.len()
        )));
    }
    let diff: Vec<f64> = a.pointwise.iter().zip(&b.pointwise).map(|(x, y)| x - y).collect();
    Ok((a.waic - b.waic, sum_se(&diff)))
}

/// Most probable category per observation at one parameter point.
pub fn predicted_categories<M: ObservationModel + ?Sized>(model: &M, point: &[f64]) -> Vec<usize> {
    (0..model.n_obs())
        .into_par_iter()
        .map(|o| {
            let mut buf = vec![0.0; model.n_categories(o)];
            model.category_logprobs(point, o, &mut buf);
            argmax(&buf)
        })
        .collect()
}

/// Fraction of observations whose most probable category at the posterior
/// medians differs from the observed one. Ties go to the lower category.
pub fn prediction_error<M: ObservationModel + ?Sized>(model: &M, d: &DrawSet) -> Result<f64> {
    if model.n_obs() == 0 {
        return Err(Error::EmptyData("no observations to predict".into()));
    }
    let point = d.medians();
    let predicted = predicted_categories(model, &point);
    let wrong = predicted
        .iter()
        .enumerate()
        .filter(|&(o, &p)| p != model.observed(o))
        .count();
    Ok(wrong as f64 / model.n_obs() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub waic: f64,
    pub se: f64,
    pub p_waic: f64,
    pub prediction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreCheck {
    pub examiner_id: String,
    pub n_items: usize,
    pub observed: f64,
    pub predicted: f64,
    #[serde(rename = "q2.5")]
    pub q2_5: f64,
    #[serde(rename = "q97.5")]
    pub q97_5: f64,
}

/// Observed proportion correct per examiner against the posterior mean of
/// the expected proportion over the same items, with a 95% interval.
/// Draws must carry `theta` and `b` blocks indexed like `m`.
pub fn posterior_predictive_scores(d: &DrawSet, m: &ScoredMatrix) -> Result<Vec<ScoreCheck>> {
    let n = m.n_examiners();
    let theta = block_columns(d, "theta", n)?;
    let b = block_columns(d, "b", m.n_items())?;
    let mut items: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut correct = vec![0usize; n];
    for e in &m.entries {
        items[e.examiner].push(e.item);
        correct[e.examiner] += e.y as usize;
    }
    let draws: Vec<&[f64]> = d.draws().collect();
    Ok((0..n)
        .into_par_iter()
        .filter(|&i| !items[i].is_empty())
        .map(|i| {
            let mut per_draw: Vec<f64> = draws
                .iter()
                .map(|draw| {
                    let th = draw[theta[i]];
                    items[i].iter().map(|&j| sigmoid(th - draw[b[j]])).sum::<f64>() / items[i].len() as f64
                })
                .collect();
            let predicted = per_draw.iter().sum::<f64>() / per_draw.len() as f64;
            per_draw.sort_by(f64::total_cmp);
            ScoreCheck {
                examiner_id: m.examiners.id(i).to_string(),
                n_items: items[i].len(),
                observed: correct[i] as f64 / items[i].len() as f64,
                predicted,
                q2_5: quantile_sorted(&per_draw, 0.025),
                q97_5: quantile_sorted(&per_draw, 0.975),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IdIndex, ScoredEntry};

    fn record(mating: Mating, latent: LatentValue, cmp: Option<Comparison>) -> ResponseRecord {
        ResponseRecord {
            examiner_id: "e".into(),
            item_id: "i".into(),
            mating,
            latent_value: latent,
            compare_value: cmp,
            inconclusive_reason: None,
            exclusion_reason: None,
            reported_difficulty: None,
        }
    }

    #[test]
    fn hand_counted_rates() {
        use Comparison::*;
        use LatentValue::*;
        use Mating::*;
        let recs = vec![
            record(NonMates, VID, Some(Individualization)),
            record(NonMates, VID, Some(Exclusion)),
            record(NonMates, VID, Some(Exclusion)),
            record(NonMates, VEO, Some(Exclusion)),
            record(NonMates, VID, Some(Exclusion)),
            record(NonMates, VID, Some(Inconclusive)),
            record(NonMates, NV, None),
            record(Mates, VID, Some(Individualization)),
            record(Mates, VID, Some(Inconclusive)),
            record(Mates, NV, None),
        ];
        let r = error_rates(&recs);
        assert_eq!(r.fpr, Some(0.2));
        assert_eq!(r.fnr, Some(0.0));
        assert_eq!(r.nonmates.no_value + r.mates.no_value, 2);
        let none = error_rates(&recs[9..]);
        assert_eq!((none.fpr, none.fnr), (None, None));
    }

    #[test]
    fn waic_two_draw_hand_values() {
        let (a, b) = (0.4f64.ln(), 0.6f64.ln());
        let p = PointwiseLogLik::new(vec![a, b], 2, 1).unwrap();
        let w = waic(&p).unwrap();
        assert!((w.lppd - 0.5f64.ln()).abs() < 1e-15);
        let var = (a - b).powi(2) / 2.0;
        assert!((w.p_waic - var).abs() < 1e-15);
        assert!((w.waic + 2.0 * (0.5f64.ln() - var)).abs() < 1e-14);
    }

    #[test]
    fn identical_draws_have_no_penalty() {
        let row = [-0.3, -1.2, -0.05];
        let p = PointwiseLogLik::new(row.repeat(5), 5, 3).unwrap();
        let w = waic(&p).unwrap();
        assert_eq!(w.p_waic, 0.0);
        assert!((w.waic + 2.0 * row.iter().sum::<f64>()).abs() < 1e-14);
        assert!(waic(&PointwiseLogLik::new(row.to_vec(), 1, 3).unwrap()).is_err());
    }

    #[test]
    fn accumulator_is_shift_stable() {
        let mut acc = PointwiseAccumulator::new();
        for x in [-1000.0, -1001.0, -999.0] {
            acc.push(x);
        }
        let want = -1000.0 + ((1.0 + (-1.0f64).exp() + 1.0f64.exp()) / 3.0).ln();
        assert!((acc.lppd() - want).abs() < 1e-12);
        assert!((acc.variance() - 1.0).abs() < 1e-12);
    }

    struct Fixed {
        observed: Vec<usize>,
        logits: Vec<[f64; 3]>,
    }

    impl ObservationModel for Fixed {
        fn n_obs(&self) -> usize {
            self.observed.len()
        }
        fn n_categories(&self, _: usize) -> usize {
            3
        }
        fn observed(&self, o: usize) -> usize {
            self.observed[o]
        }
        fn grouping(&self) -> String {
            "conclusiveness".into()
        }
        fn category_logprobs(&self, draw: &[f64], o: usize, out: &mut [f64]) {
            let shift = draw[0];
            let mut v: Vec<f64> = self.logits[o].iter().map(|x| x + shift * (o as f64)).collect();
            crate::models::log_normalize(&mut v);
            out.copy_from_slice(&v);
        }
    }

    #[test]
    fn prediction_error_hand_count() {
        let m = Fixed {
            observed: vec![0, 1, 2, 2],
            logits: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
        };
        let d = DrawSet::point_mass(vec!["s".into()], &[0.0], 3).unwrap();
        assert_eq!(prediction_error(&m, &d).unwrap(), 0.25);
    }

    #[test]
    fn streaming_matches_matrix() {
        let m = Fixed {
            observed: vec![0, 1, 2, 2],
            logits: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
        };
        let d = DrawSet::new(
            vec!["s".into()],
            vec![vec![vec![0.1], vec![-0.4], vec![0.7]], vec![vec![0.0], vec![0.3], vec![-0.2]]],
            Vec::new(),
        )
        .unwrap();
        let a = waic(&PointwiseLogLik::compute(&m, &d).unwrap()).unwrap();
        let b = waic_streaming(&m, &d).unwrap();
        assert!((a.waic - b.waic).abs() < 1e-12 && (a.se - b.se).abs() < 1e-12);
        let (diff, se) = waic_difference(&a, &a).unwrap();
        assert_eq!((diff, se), (0.0, 0.0));
    }

    #[test]
    fn predictive_score_at_zero_is_half() {
        let m = ScoredMatrix::new(
            IdIndex::from_ids(["a"]),
            IdIndex::from_ids(["x", "y"]),
            vec![
                ScoredEntry { examiner: 0, item: 0, y: 1 },
                ScoredEntry { examiner: 0, item: 1, y: 1 },
            ],
        )
        .unwrap();
        let names = vec!["theta[1]".into(), "b[1]".into(), "b[2]".into()];
        let d = DrawSet::point_mass(names.clone(), &[0.4, 0.4, 0.4], 2).unwrap();
        let s = posterior_predictive_scores(&d, &m).unwrap();
        assert_eq!(s[0].predicted, 0.5);
        assert_eq!(s[0].observed, 1.0);
        let d = DrawSet::point_mass(names, &[1.0, 0.0, 0.0], 1).unwrap();
        let s = posterior_predictive_scores(&d, &m).unwrap();
        assert!((s[0].predicted - sigmoid(1.0)).abs() < 1e-15);
    }
}
