//! Synthetic response data from every model, with the generating values kept
//! for recovery checks.

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    Comparison, Conclusiveness, IdIndex, InconclusiveReason, KeyResponse, LatentValue, Mating, ReportedDifficulty,
    ResponseRecord, SequentialResponse,
};
use crate::engine::nuts::chain_rng;
use crate::engine::DrawSet;
use crate::error::{Error, Result};
use crate::math::{pearson, sigmoid};
use crate::models::consensus::{cell_logprobs, thresholds, ConsensusParams, ConsensusVariant};
use crate::models::joint::ordered_logit_probs;
use crate::models::tree::TreeSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    Complete,
    /// Items per examiner, drawn uniformly without replacement.
    RandomSubset(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n_examiners: usize,
    pub n_items: usize,
    pub assignment: Assignment,
    pub mates_fraction: f64,
    pub seed: u64,
}

/// Concrete examiner x item layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub examiner_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub mating: Vec<Mating>,
    /// Items assigned to each examiner, ascending.
    pub assigned: Vec<Vec<usize>>,
    pub seed: u64,
}

impl DesignSpec {
    pub fn build(&self) -> Result<Design> {
        if self.n_examiners == 0 || self.n_items == 0 {
            return Err(Error::Domain("design needs at least one examiner and one item".into()));
        }
        if !(0.0..=1.0).contains(&self.mates_fraction) {
            return Err(Error::Domain(format!("mates fraction {} outside [0, 1]", self.mates_fraction)));
        }
        if let Assignment::RandomSubset(k) = self.assignment {
            if k == 0 || k > self.n_items {
                return Err(Error::Domain(format!("{k} items per examiner from a pool of {}", self.n_items)));
            }
        }
        let width = |n: usize| n.to_string().len().max(3);
        let (we, wi) = (width(self.n_examiners), width(self.n_items));
        let examiner_ids = (1..=self.n_examiners).map(|i| format!("E{i:0we$}")).collect();
        let item_ids = (1..=self.n_items).map(|j| format!("I{j:0wi$}")).collect();
        let n_mates = (self.mates_fraction * self.n_items as f64).round() as usize;
        let mut rng = chain_rng(self.seed, self.n_examiners);
        let mut mating = vec![Mating::NonMates; self.n_items];
        for j in sample(&mut rng, self.n_items, n_mates) {
            mating[j] = Mating::Mates;
        }
        let assigned = (0..self.n_examiners)
            .map(|i| match self.assignment {
                Assignment::Complete => (0..self.n_items).collect(),
                Assignment::RandomSubset(k) => {
                    let mut rng = chain_rng(self.seed, i);
                    let mut v = sample(&mut rng, self.n_items, k).into_vec();
                    v.sort_unstable();
                    v
                }
            })
            .collect();
        Ok(Design {
            examiner_ids,
            item_ids,
            mating,
            assigned,
            seed: self.seed,
        })
    }
}

impl Design {
    pub fn n_examiners(&self) -> usize {
        self.examiner_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// 1 for mated items, 0 otherwise.
    pub fn mating_covariate(&self) -> Vec<f64> {
        self.mating.iter().map(|m| (*m == Mating::Mates) as u8 as f64).collect()
    }
}

/// Generating parameter values. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthParams {
    Rasch {
        theta: Vec<f64>,
        b: Vec<f64>,
    },
    Joint {
        theta: Vec<f64>,
        b: Vec<f64>,
        g: f64,
        h: Vec<f64>,
        f: Vec<f64>,
        gamma: Vec<f64>,
    },
    IRTree {
        tree: TreeSpec,
        theta: Vec<f64>,
        b: Vec<f64>,
        beta0: Vec<f64>,
        beta1: Vec<f64>,
    },
    Consensus {
        variant: ConsensusVariant,
        params: ConsensusParams,
    },
}

fn normals<R: Rng>(rng: &mut R, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let d = Normal::new(mean, sd).expect("valid normal");
    (0..n).map(|_| d.sample(rng)).collect()
}

impl TruthParams {
    pub fn rasch(design: &Design, sigma_theta: f64, mu_b: f64, sigma_b: f64) -> Self {
        let mut rng = chain_rng(design.seed ^ 0x7275, 0);
        Self::Rasch {
            theta: normals(&mut rng, design.n_examiners(), 0.0, sigma_theta),
            b: normals(&mut rng, design.n_items(), mu_b, sigma_b),
        }
    }

    pub fn joint(design: &Design, sigma_theta: f64, sigma_b: f64, sigma_h: f64, sigma_f: f64) -> Self {
        let mut rng = chain_rng(design.seed ^ 0x6a6f, 0);
        let (n, j) = (design.n_examiners(), design.n_items());
        Self::Joint {
            theta: normals(&mut rng, n, 0.0, sigma_theta),
            b: normals(&mut rng, j, 0.0, sigma_b),
            g: 1.0,
            h: normals(&mut rng, n, 0.0, sigma_h),
            f: normals(&mut rng, j, 0.0, sigma_f),
            gamma: vec![-2.0, -0.7, 0.7, 2.0],
        }
    }

    /// Independent node effects: `θ_ik ~ N(0, σθ_k)` and
    /// `b_jk ~ N(β0_k + β1_k x_j, σb_k)` with `x` the mating covariate.
    pub fn irtree(
        design: &Design,
        tree: &TreeSpec,
        beta0: &[f64],
        beta1: &[f64],
        sigma_theta: &[f64],
        sigma_b: &[f64],
    ) -> Result<Self> {
        let k = tree.n_nodes();
        if [beta0.len(), beta1.len(), sigma_theta.len(), sigma_b.len()].iter().any(|&l| l != k) {
            return Err(Error::Shape(format!("tree has {k} nodes")));
        }
        let mut rng = chain_rng(design.seed ^ 0x6972, 0);
        let x = design.mating_covariate();
        let std = Normal::new(0.0, 1.0).unwrap();
        let theta = (0..design.n_examiners() * k)
            .map(|idx| sigma_theta[idx % k] * std.sample(&mut rng))
            .collect();
        let b = (0..design.n_items() * k)
            .map(|idx| {
                let (j, a) = (idx / k, idx % k);
                beta0[a] + beta1[a] * x[j] + sigma_b[a] * std.sample(&mut rng)
            })
            .collect();
        Ok(Self::IRTree {
            tree: tree.clone(),
            theta,
            b,
            beta0: beta0.to_vec(),
            beta1: beta1.to_vec(),
        })
    }

    /// Preset node effects for the two built-in trees: rare no-value calls,
    /// a minority of inconclusives and strong mating effects at the
    /// comparison nodes, giving rare false individualizations.
    pub fn irtree_default(design: &Design, tree: &TreeSpec) -> Result<Self> {
        let (beta0, beta1): (&[f64], &[f64]) = if *tree == TreeSpec::decision_process() {
            (&[2.0, 1.5, 2.0, 3.0, -1.5], &[0.0, 0.0, -4.0, -4.5, 2.5])
        } else if *tree == TreeSpec::answer_key() {
            (&[2.0, 1.0, 4.0], &[0.0, 0.0, -6.0])
        } else {
            return Err(Error::Domain("no preset effects for a custom tree".into()));
        };
        let k = tree.n_nodes();
        Self::irtree(design, tree, beta0, beta1, &vec![1.0; k], &vec![0.7; k])
    }

    pub fn consensus(design: &Design, variant: ConsensusVariant) -> Self {
        let mut rng = chain_rng(design.seed ^ 0x6363, 0);
        let (n, j) = (design.n_examiners(), design.n_items());
        let ln = |sd: f64| LogNormal::new(0.0, sd).unwrap();
        let a = (0..n).map(|_| ln(0.3).sample(&mut rng)).collect();
        let t = normals(&mut rng, j, 0.0, 1.5);
        let b = normals(&mut rng, n, 0.0, 0.3);
        let (e, lambda) = if variant == ConsensusVariant::Ltrm {
            let e = (0..n).map(|_| ln(0.5).sample(&mut rng)).collect();
            let mut l: Vec<f64> = (0..j).map(|_| ln(0.5).sample(&mut rng)).collect();
            let mean_log = l.iter().map(|v| v.ln()).sum::<f64>() / j as f64;
            l.iter_mut().for_each(|v| *v /= mean_log.exp());
            (Some(e), Some(l))
        } else {
            (None, None)
        };
        Self::Consensus {
            variant,
            params: ConsensusParams {
                t,
                gamma: vec![-1.0, 1.0],
                a,
                b,
                e,
                lambda,
            },
        }
    }

    fn check(&self, design: &Design) -> Result<()> {
        let (n, j) = (design.n_examiners(), design.n_items());
        let ok = match self {
            Self::Rasch { theta, b } => theta.len() == n && b.len() == j,
            Self::Joint { theta, b, h, f, gamma, .. } => {
                theta.len() == n && b.len() == j && h.len() == n && f.len() == j && gamma.len() == 4
            }
            Self::IRTree { tree, theta, b, .. } => {
                theta.len() == n * tree.n_nodes() && b.len() == j * tree.n_nodes()
            }
            Self::Consensus { variant, params } => {
                params.t.len() == j
                    && params.a.len() == n
                    && params.b.len() == n
                    && params.gamma.len() == 2
                    && (*variant != ConsensusVariant::Ltrm
                        || (params.e.as_ref().is_some_and(|e| e.len() == n)
                            && params.lambda.as_ref().is_some_and(|l| l.len() == j)))
            }
        };
        if !ok {
            return Err(Error::Shape("truth values do not fit the design".into()));
        }
        if let Self::Consensus { params, .. } = self {
            for &a in &params.a {
                thresholds(a, 0.0, &params.gamma)?;
            }
        }
        Ok(())
    }

    /// Category probabilities for one examiner x item cell.
    fn cell_probs(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        match self {
            Self::Rasch { theta, b } => {
                let p = sigmoid(theta[i] - b[j]);
                Ok(vec![1.0 - p, p])
            }
            Self::Joint { .. } => unreachable!("joint cells are drawn in two parts"),
            Self::IRTree { tree, theta, b, .. } => {
                let k = tree.n_nodes();
                tree.leaf_probs(&theta[i * k..(i + 1) * k], &b[j * k..(j + 1) * k])
            }
            Self::Consensus { variant, params } => {
                let delta = thresholds(params.a[i], params.b[i], &params.gamma)?;
                let s = match (&params.e, &params.lambda) {
                    (Some(e), Some(l)) if *variant == ConsensusVariant::Ltrm => (e[i] / l[j]).sqrt(),
                    _ => 1.0,
                };
                let mut out = vec![0.0; params.gamma.len() + 1];
                cell_logprobs(*variant, params.t[j], &delta, s, &mut out);
                Ok(out.into_iter().map(f64::exp).collect())
            }
        }
    }
}

fn draw_category<R: Rng>(rng: &mut R, probs: &[f64]) -> Result<usize> {
    let w = WeightedIndex::new(probs).map_err(|e| Error::Domain(format!("category probabilities {probs:?}: {e}")))?;
    Ok(w.sample(rng))
}

fn base_record(design: &Design, i: usize, j: usize) -> ResponseRecord {
    ResponseRecord {
        examiner_id: design.examiner_ids[i].clone(),
        item_id: design.item_ids[j].clone(),
        mating: design.mating[j],
        latent_value: LatentValue::VID,
        compare_value: None,
        inconclusive_reason: None,
        exclusion_reason: None,
        reported_difficulty: None,
    }
}

fn conclusive(r: &mut ResponseRecord, correct: bool) {
    let mates = r.mating == Mating::Mates;
    r.compare_value = Some(if mates == correct {
        Comparison::Individualization
    } else {
        Comparison::Exclusion
    });
}

fn inconclusive(r: &mut ResponseRecord, reason: InconclusiveReason) {
    r.compare_value = Some(Comparison::Inconclusive);
    r.inconclusive_reason = Some(reason);
}

fn no_value(r: &mut ResponseRecord) {
    r.latent_value = LatentValue::NV;
}

fn leaf_record(r: &mut ResponseRecord, tree: &TreeSpec, leaf: usize) {
    let name = tree.leaf_names()[leaf].as_str();
    if let Some(s) = SequentialResponse::ALL.iter().find(|s| s.name() == name) {
        match s {
            SequentialResponse::NoValue => no_value(r),
            SequentialResponse::Individualization => r.compare_value = Some(Comparison::Individualization),
            SequentialResponse::Exclusion => r.compare_value = Some(Comparison::Exclusion),
            SequentialResponse::Close => inconclusive(r, InconclusiveReason::Close),
            SequentialResponse::Insufficient => inconclusive(r, InconclusiveReason::Insufficient),
            SequentialResponse::NoOverlap => inconclusive(r, InconclusiveReason::NoOverlap),
        }
        return;
    }
    match KeyResponse::ALL.iter().find(|s| s.name() == name) {
        Some(KeyResponse::NoValue) => no_value(r),
        Some(KeyResponse::Individualization) => r.compare_value = Some(Comparison::Individualization),
        Some(KeyResponse::Exclusion) => r.compare_value = Some(Comparison::Exclusion),
        _ => inconclusive(r, InconclusiveReason::Close),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Examiner,
    Item,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBlock {
    pub name: String,
    pub axis: Axis,
    /// Values per row; row-major.
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Generating values, addressed by the names fitted draws use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub examiner_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub blocks: Vec<TruthBlock>,
}

impl Truth {
    pub fn block(&self, name: &str) -> Option<&TruthBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub records: Vec<ResponseRecord>,
    pub truth: Truth,
}

fn block(name: &str, axis: Axis, cols: usize, values: &[f64]) -> TruthBlock {
    TruthBlock {
        name: name.into(),
        axis,
        cols,
        values: values.to_vec(),
    }
}

/// Draws one response per assigned cell. Each examiner has its own random
/// stream, so output does not depend on thread scheduling.
pub fn simulate(params: &TruthParams, design: &Design) -> Result<Simulated> {
    params.check(design)?;
    let per_examiner: Vec<Vec<ResponseRecord>> = (0..design.n_examiners())
        .into_par_iter()
        .map(|i| {
            let mut rng = chain_rng(design.seed ^ 0x5e55_1011, i);
            design.assigned[i]
                .iter()
                .map(|&j| {
                    let mut r = base_record(design, i, j);
                    match params {
                        TruthParams::Rasch { .. } => {
                            let y = draw_category(&mut rng, &params.cell_probs(i, j)?)?;
                            conclusive(&mut r, y == 1);
                        }
                        TruthParams::Joint {
                            theta,
                            b,
                            g,
                            h,
                            f,
                            gamma,
                        } => {
                            let p = sigmoid(theta[i] - b[j]);
                            let y = draw_category(&mut rng, &[1.0 - p, p])?;
                            conclusive(&mut r, y == 1);
                            let eta = g * (theta[i] - b[j]) + h[i] + f[j];
                            let level = draw_category(&mut rng, &ordered_logit_probs(eta, gamma)?)?;
                            r.reported_difficulty = ReportedDifficulty::from_level(level + 1);
                        }
                        TruthParams::IRTree { tree, .. } => {
                            let leaf = draw_category(&mut rng, &params.cell_probs(i, j)?)?;
                            leaf_record(&mut r, tree, leaf);
                        }
                        TruthParams::Consensus { .. } => {
                            let c = draw_category(&mut rng, &params.cell_probs(i, j)?)?;
                            match Conclusiveness::from_index(c) {
                                Some(Conclusiveness::NoValue) => no_value(&mut r),
                                Some(Conclusiveness::Inconclusive) => inconclusive(&mut r, InconclusiveReason::Close),
                                _ => conclusive(&mut r, true),
                            }
                        }
                    }
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let blocks = match params {
        TruthParams::Rasch { theta, b } => vec![
            block("theta", Axis::Examiner, 1, theta),
            block("b", Axis::Item, 1, b),
        ],
        TruthParams::Joint {
            theta,
            b,
            g,
            h,
            f,
            gamma,
        } => vec![
            block("theta", Axis::Examiner, 1, theta),
            block("b", Axis::Item, 1, b),
            block("g", Axis::Global, 1, &[*g]),
            block("h", Axis::Examiner, 1, h),
            block("f", Axis::Item, 1, f),
            block("gamma", Axis::Global, gamma.len(), gamma),
        ],
        TruthParams::IRTree {
            tree,
            theta,
            b,
            beta0,
            beta1,
        } => {
            let k = tree.n_nodes();
            vec![
                block("theta", Axis::Examiner, k, theta),
                block("b", Axis::Item, k, b),
                block("beta0", Axis::Global, k, beta0),
                block("beta1", Axis::Global, k, beta1),
            ]
        }
        TruthParams::Consensus { params, .. } => {
            let mut v = vec![
                block("T", Axis::Item, 1, &params.t),
                block("gamma", Axis::Global, params.gamma.len(), &params.gamma),
                block("a", Axis::Examiner, 1, &params.a),
                block("b", Axis::Examiner, 1, &params.b),
            ];
            if let (Some(e), Some(l)) = (&params.e, &params.lambda) {
                v.push(block("E", Axis::Examiner, 1, e));
                v.push(block("lambda", Axis::Item, 1, l));
            }
            v
        }
    };
    Ok(Simulated {
        records: per_examiner.concat(),
        truth: Truth {
            examiner_ids: design.examiner_ids.clone(),
            item_ids: design.item_ids.clone(),
            blocks,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub block: String,
    pub n: usize,
    pub correlation: f64,
    /// Share of true values inside the central 95% posterior interval.
    pub coverage95: f64,
    /// Root mean squared error of the posterior mean.
    pub rmse: f64,
}

fn draw_name(b: &TruthBlock, row: usize, col: usize) -> String {
    match (b.axis, b.cols) {
        (Axis::Global, 1) => b.name.clone(),
        (Axis::Global, _) => format!("{}[{}]", b.name, col + 1),
        (_, 1) => format!("{}[{}]", b.name, row + 1),
        _ => format!("{}[{},{}]", b.name, row + 1, col + 1),
    }
}

/// Compares generating values with fitted draws, block by block. Examiners
/// and items are matched by id against the fitted indices; those the fit
/// dropped are skipped.
pub fn recovery_report(truth: &Truth, d: &DrawSet, examiners: &IdIndex, items: &IdIndex) -> Result<Vec<RecoveryRow>> {
    truth
        .blocks
        .iter()
        .map(|b| {
            let rows = match b.axis {
                Axis::Global => 1,
                _ => b.values.len() / b.cols,
            };
            let mut est = Vec::new();
            let mut tru = Vec::new();
            let mut covered = 0usize;
            for r in 0..rows {
                let fitted_row = match b.axis {
                    Axis::Examiner => examiners.index_of(&truth.examiner_ids[r]),
                    Axis::Item => items.index_of(&truth.item_ids[r]),
                    Axis::Global => Some(0),
                };
                let Some(fr) = fitted_row else { continue };
                for c in 0..b.cols {
                    let name = draw_name(b, fr, c);
                    let col = d
                        .index_of(&name)
                        .ok_or_else(|| Error::Mismatch(format!("draws lack {name}")))?;
                    let v = b.values[r * b.cols + c];
                    let (lo, hi) = (d.quantile(col, 0.025), d.quantile(col, 0.975));
                    covered += (lo <= v && v <= hi) as usize;
                    est.push(d.mean(col));
                    tru.push(v);
                }
            }
            let n = tru.len();
            if n == 0 {
                return Err(Error::Mismatch(format!("no fitted values for block {}", b.name)));
            }
            let rmse = (est.iter().zip(&tru).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n as f64).sqrt();
            Ok(RecoveryRow {
                block: b.name.clone(),
                n,
                correlation: if n > 1 { pearson(&tru, &est) } else { f64::NAN },
                coverage95: covered as f64 / n as f64,
                rmse,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{conclusiveness_data, parse_table, sequential_data, write_table, TableFormat};

    fn design(n: usize, j: usize, assignment: Assignment, seed: u64) -> Design {
        DesignSpec {
            n_examiners: n,
            n_items: j,
            assignment,
            mates_fraction: 0.3,
            seed,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn design_layout() {
        let d = design(5, 40, Assignment::RandomSubset(10), 3);
        assert!(d.assigned.iter().all(|a| a.len() == 10 && a.windows(2).all(|w| w[0] < w[1])));
        assert_eq!(d.mating.iter().filter(|m| **m == Mating::Mates).count(), 12);
        assert_eq!(d.examiner_ids[0], "E001");
        let bad = DesignSpec {
            n_examiners: 2,
            n_items: 3,
            assignment: Assignment::RandomSubset(4),
            mates_fraction: 0.5,
            seed: 0,
        };
        assert!(bad.build().is_err());
    }

    #[test]
    fn fair_coin_rasch() {
        let d = design(40, 100, Assignment::Complete, 1);
        let p = TruthParams::Rasch {
            theta: vec![0.3; 40],
            b: vec![0.3; 100],
        };
        let s = simulate(&p, &d).unwrap();
        let n = s.records.len() as f64;
        let correct = s.records.iter().filter(|r| r.is_true_conclusion() == Some(true)).count() as f64;
        assert!((correct / n - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
    }

    #[test]
    fn seeded_and_round_trips() {
        let d = design(6, 20, Assignment::RandomSubset(8), 9);
        let p = TruthParams::joint(&d, 1.0, 1.0, 0.5, 0.5);
        let a = simulate(&p, &d).unwrap();
        let b = simulate(&p, &d).unwrap();
        assert_eq!(a, b);
        assert!(a.records.iter().all(|r| r.is_valid()));
        let mut buf = Vec::new();
        write_table(&a.records, &mut buf, &TableFormat::default()).unwrap();
        let parsed = parse_table(buf.as_slice(), &TableFormat::default()).unwrap();
        assert_eq!(parsed.records, a.records);
    }

    #[test]
    fn saturated_no_value_node() {
        let tree = TreeSpec::decision_process();
        let d = design(10, 30, Assignment::Complete, 2);
        let mut p = TruthParams::irtree(&d, &tree, &[0.0; 5], &[0.0; 5], &[0.5; 5], &[0.5; 5]).unwrap();
        if let TruthParams::IRTree { theta, .. } = &mut p {
            for i in 0..10 {
                theta[i * 5] = 30.0;
            }
        }
        let s = simulate(&p, &d).unwrap();
        assert!(s.records.iter().all(|r| r.latent_value == LatentValue::NV && r.is_valid()));
    }

    #[test]
    fn vanishing_noise_ltrm() {
        let d = design(4, 25, Assignment::Complete, 4);
        let mut p = TruthParams::consensus(&d, ConsensusVariant::Ltrm);
        if let TruthParams::Consensus { params, .. } = &mut p {
            params.a = vec![1.0; 4];
            params.b = vec![0.0; 4];
            params.e = Some(vec![1e12; 4]);
        }
        let s = simulate(&p, &d).unwrap();
        let TruthParams::Consensus { params, .. } = &p else { unreachable!() };
        let data = conclusiveness_data(&s.records).unwrap();
        for o in &data.obs {
            let j = d.item_ids.iter().position(|id| id == data.items.id(o.item)).unwrap();
            let want = params.gamma.iter().filter(|&&g| params.t[j] > g).count();
            assert_eq!(o.category, want);
        }
    }

    #[test]
    fn leaf_frequencies_match_probabilities() {
        let tree = TreeSpec::decision_process();
        let d = design(1, 1, Assignment::Complete, 0);
        let theta = vec![-0.5, 0.4, 0.2, -1.0, 0.7];
        let b = vec![0.3, -0.2, 0.1, 0.5, -0.4];
        let probs = tree.leaf_probs(&theta, &b).unwrap();
        let mut counts = [0usize; 6];
        let reps = 4000;
        for seed in 0..reps {
            let dd = Design { seed, ..d.clone() };
            let p = TruthParams::IRTree {
                tree: tree.clone(),
                theta: theta.clone(),
                b: b.clone(),
                beta0: vec![0.0; 5],
                beta1: vec![0.0; 5],
            };
            let s = simulate(&p, &dd).unwrap();
            counts[sequential_data(&s.records).unwrap().obs[0].category] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let freq = *c as f64 / reps as f64;
            assert!((freq - p).abs() <= 4.0 * (p * (1.0 - p) / reps as f64).sqrt(), "{freq} vs {p}");
        }
    }

    #[test]
    fn recovery_of_point_mass_truth() {
        let d = design(8, 12, Assignment::Complete, 5);
        let p = TruthParams::rasch(&d, 1.0, 0.0, 1.0);
        let s = simulate(&p, &d).unwrap();
        let theta = &s.truth.block("theta").unwrap().values;
        let b = &s.truth.block("b").unwrap().values;
        let mut names: Vec<String> = (1..=8).map(|i| format!("theta[{i}]")).collect();
        names.extend((1..=12).map(|j| format!("b[{j}]")));
        let mut point = theta.clone();
        point.extend_from_slice(b);
        let draws = DrawSet::point_mass(names, &point, 2).unwrap();
        let e = IdIndex::from_ids(d.examiner_ids.clone());
        let i = IdIndex::from_ids(d.item_ids.clone());
        let rows = recovery_report(&s.truth, &draws, &e, &i).unwrap();
        for r in rows {
            assert!((r.correlation - 1.0).abs() < 1e-12 && r.rmse == 0.0 && r.coverage95 == 1.0);
        }
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let d = design(170, 5, Assignment::Complete, 6);
        let p = TruthParams::rasch(&d, 1.0, 0.0, 1.0);
        let s = simulate(&p, &d).unwrap();
        let mut rng = chain_rng(99, 0);
        let noise = normals(&mut rng, 175, 0.0, 1.0);
        let mut names: Vec<String> = (1..=170).map(|i| format!("theta[{i}]")).collect();
        names.extend((1..=5).map(|j| format!("b[{j}]")));
        let draws = DrawSet::point_mass(names, &noise, 2).unwrap();
        let e = IdIndex::from_ids(d.examiner_ids.clone());
        let i = IdIndex::from_ids(d.item_ids.clone());
        let rows = recovery_report(&s.truth, &draws, &e, &i).unwrap();
        assert!(rows[0].correlation.abs() < 0.2, "{}", rows[0].correlation);
    }
}
