//! Item response tree with correlated node effects and a mating covariate on
//! the item means.

use serde::Serialize;

use super::rasch::SCALE_PRIOR;
use super::tree::TreeSpec;
use super::{argmax, block_medians, compact_categorical, ObservationModel};
use crate::data::CategoricalData;
use crate::engine::priors::{half_cauchy, lkj_cholesky, normal};
use crate::engine::{Constraint, DrawSet, LogDensityModel, ParameterSpace};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid_grad, log_sum_exp, quantile_sorted, ExactSum, LN_SQRT_2PI};

pub const LKJ_SHAPE: f64 = 4.0;
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.5;

/// Node parameters in natural (not standardized) form. Matrices are
/// row-major: `theta[i * K + k]`, `l_theta[k * K + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IRTreeParams {
    pub k: usize,
    pub theta: Vec<f64>,
    pub b: Vec<f64>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub sigma_theta: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub l_theta: Vec<f64>,
    pub l_b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IRTreeConfig {
    /// Standard deviation of the normal prior on `beta0` and `beta1`.
    pub beta_sd: f64,
}

impl Default for IRTreeConfig {
    fn default() -> Self {
        Self { beta_sd: 1.0 }
    }
}

fn check_data(data: &CategoricalData, tree: &TreeSpec) -> Result<()> {
    if data.n_categories != tree.n_leaves() {
        return Err(Error::Shape(format!(
            "data has {} categories, tree has {} leaves",
            data.n_categories,
            tree.n_leaves()
        )));
    }
    Ok(())
}

/// Sum of leaf log probabilities over all observations.
pub fn irtree_loglik(p: &IRTreeParams, data: &CategoricalData, tree: &TreeSpec) -> Result<f64> {
    check_data(data, tree)?;
    let k = tree.n_nodes();
    if p.k != k || p.theta.len() != data.n_examiners() * k || p.b.len() != data.n_items() * k {
        return Err(Error::Shape("node parameters disagree with the data or tree".into()));
    }
    let mut acc = ExactSum::new();
    for o in &data.obs {
        let th = &p.theta[o.examiner * k..(o.examiner + 1) * k];
        let b = &p.b[o.item * k..(o.item + 1) * k];
        acc.add(tree.leaf_logprob_unchecked(th, b, o.category));
    }
    Ok(acc.value())
}

/// Posterior over standardized effects: `theta_i = diag(σθ) Lθ zθ_i` and
/// `b_j = β0 + β1 x_j + diag(σb) Lb zb_j`. Draws report `theta` and `b`.
#[derive(Debug, Clone)]
pub struct IRTreeModel {
    space: ParameterSpace,
    tree: TreeSpec,
    data: CategoricalData,
    covariate: Vec<f64>,
    config: IRTreeConfig,
}

struct Layout {
    n: usize,
    j: usize,
    k: usize,
}

impl Layout {
    fn z_theta(&self) -> usize {
        0
    }
    fn z_b(&self) -> usize {
        self.n * self.k
    }
    fn beta0(&self) -> usize {
        self.z_b() + self.j * self.k
    }
    fn beta1(&self) -> usize {
        self.beta0() + self.k
    }
    fn sigma_theta(&self) -> usize {
        self.beta1() + self.k
    }
    fn sigma_b(&self) -> usize {
        self.sigma_theta() + self.k
    }
    fn l_theta(&self) -> usize {
        self.sigma_b() + self.k
    }
    fn l_b(&self) -> usize {
        self.l_theta() + self.k * self.k
    }
}

/// `covariate` is aligned with `data.items`; examiners and items without
/// observations are dropped.
pub fn irtree_posterior(
    data: &CategoricalData,
    covariate: &[f64],
    tree: &TreeSpec,
    config: IRTreeConfig,
) -> Result<IRTreeModel> {
    check_data(data, tree)?;
    if data.obs.is_empty() {
        return Err(Error::EmptyData("no tree responses".into()));
    }
    if covariate.len() != data.n_items() {
        return Err(Error::Shape(format!(
            "{} covariate values for {} items",
            covariate.len(),
            data.n_items()
        )));
    }
    if !(config.beta_sd > 0.0) {
        return Err(Error::Domain("beta prior sd must be positive".into()));
    }
    let compact = compact_categorical(data)?;
    let covariate = compact
        .items
        .ids()
        .iter()
        .map(|id| covariate[data.items.index_of(id).expect("compacted ids come from data")])
        .collect();
    let (n, j, k) = (compact.n_examiners(), compact.n_items(), tree.n_nodes());
    let space = ParameterSpace::new()
        .with("z_theta", &[n, k], Constraint::Free)
        .with("z_b", &[j, k], Constraint::Free)
        .with("beta0", &[k], Constraint::Free)
        .with("beta1", &[k], Constraint::Free)
        .with("sigma_theta", &[k], Constraint::Positive)
        .with("sigma_b", &[k], Constraint::Positive)
        .with("L_theta", &[k, k], Constraint::CorrelationCholesky)
        .with("L_b", &[k, k], Constraint::CorrelationCholesky);
    Ok(IRTreeModel {
        space,
        tree: tree.clone(),
        data: compact,
        covariate,
        config,
    })
}

/// `out[r*K + k] = offset[k] + sigma[k] * (L z_r)_k` for every row `r`.
fn scale_rows(z: &[f64], sigma: &[f64], l: &[f64], k: usize, out: &mut [f64]) {
    for (zr, or) in z.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        for a in 0..k {
            let mut s = 0.0;
            for m in 0..=a {
                s += l[a * k + m] * zr[m];
            }
            or[a] += sigma[a] * s;
        }
    }
}

/// Pulls `d/d(natural)` back onto `z`, `sigma` and `L`.
#[allow(clippy::too_many_arguments)]
fn scale_rows_backprop(
    z: &[f64],
    sigma: &[f64],
    l: &[f64],
    k: usize,
    d_nat: &[f64],
    g_z: &mut [f64],
    g_sigma: &mut [f64],
    g_l: &mut [f64],
) {
    for ((zr, dr), gz) in z.chunks_exact(k).zip(d_nat.chunks_exact(k)).zip(g_z.chunks_exact_mut(k)) {
        for a in 0..k {
            let d = dr[a];
            if d == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for m in 0..=a {
                s += l[a * k + m] * zr[m];
                gz[m] += d * sigma[a] * l[a * k + m];
                g_l[a * k + m] += d * sigma[a] * zr[m];
            }
            g_sigma[a] += d * s;
        }
    }
}

impl IRTreeModel {
    pub fn tree(&self) -> &TreeSpec {
        &self.tree
    }

    pub fn data(&self) -> &CategoricalData {
        &self.data
    }

    pub fn covariate(&self) -> &[f64] {
        &self.covariate
    }

    pub fn config(&self) -> IRTreeConfig {
        self.config
    }

    fn layout(&self) -> Layout {
        Layout {
            n: self.data.n_examiners(),
            j: self.data.n_items(),
            k: self.tree.n_nodes(),
        }
    }

    fn natural(&self, c: &[f64], l: &Layout) -> (Vec<f64>, Vec<f64>) {
        let k = l.k;
        let mut theta = vec![0.0; l.n * k];
        scale_rows(
            &c[l.z_theta()..l.z_b()],
            &c[l.sigma_theta()..l.sigma_theta() + k],
            &c[l.l_theta()..l.l_theta() + k * k],
            k,
            &mut theta,
        );
        let mut b = vec![0.0; l.j * k];
        for (jj, row) in b.chunks_exact_mut(k).enumerate() {
            for a in 0..k {
                row[a] = c[l.beta0() + a] + c[l.beta1() + a] * self.covariate[jj];
            }
        }
        scale_rows(
            &c[l.z_b()..l.beta0()],
            &c[l.sigma_b()..l.sigma_b() + k],
            &c[l.l_b()..l.l_b() + k * k],
            k,
            &mut b,
        );
        (theta, b)
    }

    /// Natural parameters from a constrained point.
    pub fn unpack(&self, c: &[f64]) -> IRTreeParams {
        let l = self.layout();
        let k = l.k;
        let (theta, b) = self.natural(c, &l);
        IRTreeParams {
            k,
            theta,
            b,
            beta0: c[l.beta0()..l.beta0() + k].to_vec(),
            beta1: c[l.beta1()..l.beta1() + k].to_vec(),
            sigma_theta: c[l.sigma_theta()..l.sigma_theta() + k].to_vec(),
            sigma_b: c[l.sigma_b()..l.sigma_b() + k].to_vec(),
            l_theta: c[l.l_theta()..l.l_theta() + k * k].to_vec(),
            l_b: c[l.l_b()..l.l_b() + k * k].to_vec(),
        }
    }
}

impl LogDensityModel for IRTreeModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn constrained_log_density(&self, c: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let k = l.k;
        let (theta, b) = self.natural(c, &l);
        let mut d_theta = vec![0.0; theta.len()];
        let mut d_b = vec![0.0; b.len()];
        let mut lp = 0.0;
        for o in &self.data.obs {
            for &(node, one) in self.tree.path(o.category) {
                let eta = theta[o.examiner * k + node] - b[o.item * k + node];
                let (v, d) = if one {
                    log_sigmoid_grad(eta)
                } else {
                    let (v, d) = log_sigmoid_grad(-eta);
                    (v, -d)
                };
                lp += v;
                d_theta[o.examiner * k + node] += d;
                d_b[o.item * k + node] -= d;
            }
        }
        for (jj, row) in d_b.chunks_exact(k).enumerate() {
            for a in 0..k {
                grad[l.beta0() + a] += row[a];
                grad[l.beta1() + a] += row[a] * self.covariate[jj];
            }
        }
        let mut g_sigma = vec![0.0; k];
        let mut g_l = vec![0.0; k * k];
        scale_rows_backprop(
            &c[l.z_theta()..l.z_b()],
            &c[l.sigma_theta()..l.sigma_theta() + k],
            &c[l.l_theta()..l.l_theta() + k * k],
            k,
            &d_theta,
            &mut grad[l.z_theta()..l.z_b()],
            &mut g_sigma,
            &mut g_l,
        );
        for a in 0..k {
            grad[l.sigma_theta() + a] += g_sigma[a];
        }
        for (i, v) in g_l.iter().enumerate() {
            grad[l.l_theta() + i] += v;
        }
        g_sigma.iter_mut().for_each(|v| *v = 0.0);
        g_l.iter_mut().for_each(|v| *v = 0.0);
        scale_rows_backprop(
            &c[l.z_b()..l.beta0()],
            &c[l.sigma_b()..l.sigma_b() + k],
            &c[l.l_b()..l.l_b() + k * k],
            k,
            &d_b,
            &mut grad[l.z_b()..l.beta0()],
            &mut g_sigma,
            &mut g_l,
        );
        for a in 0..k {
            grad[l.sigma_b() + a] += g_sigma[a];
        }
        for (i, v) in g_l.iter().enumerate() {
            grad[l.l_b() + i] += v;
        }

        // priors
        for idx in l.z_theta()..l.beta0() {
            let z = c[idx];
            lp += -0.5 * z * z - LN_SQRT_2PI;
            grad[idx] -= z;
        }
        for idx in l.beta0()..l.sigma_theta() {
            let (v, d) = normal(c[idx], 0.0, self.config.beta_sd);
            lp += v;
            grad[idx] += d[0];
        }
        for idx in l.sigma_theta()..l.l_theta() {
            let (v, d) = half_cauchy(c[idx], SCALE_PRIOR);
            lp += v;
            grad[idx] += d;
        }
        for start in [l.l_theta(), l.l_b()] {
            let (v, d) = lkj_cholesky(&c[start..start + k * k], k, LKJ_SHAPE);
            lp += v;
            for (i, g) in d.iter().enumerate() {
                grad[start + i] += g;
            }
        }
        lp
    }

    fn output_names(&self) -> Vec<String> {
        let l = self.layout();
        let mut names = Vec::with_capacity(self.space.constrained_dim());
        for (block, rows) in [("theta", l.n), ("b", l.j)] {
            for r in 0..rows {
                for a in 0..l.k {
                    names.push(format!("{block}[{},{}]", r + 1, a + 1));
                }
            }
        }
        let all = self.space.names();
        names.extend_from_slice(&all[l.beta0()..]);
        names
    }

    fn write_output(&self, c: &[f64], out: &mut Vec<f64>) {
        let l = self.layout();
        let (theta, b) = self.natural(c, &l);
        out.clear();
        out.extend_from_slice(&theta);
        out.extend_from_slice(&b);
        out.extend_from_slice(&c[l.beta0()..]);
    }
}

impl ObservationModel for IRTreeModel {
    fn n_obs(&self) -> usize {
        self.data.obs.len()
    }

    fn n_categories(&self, _obs: usize) -> usize {
        3
    }

    fn observed(&self, obs: usize) -> usize {
        self.tree.group(self.data.obs[obs].category).index()
    }

    fn grouping(&self) -> String {
        "conclusiveness".into()
    }

    fn category_logprobs(&self, draw: &[f64], obs: usize, out: &mut [f64]) {
        let l = self.layout();
        let k = l.k;
        let o = self.data.obs[obs];
        let th = &draw[o.examiner * k..(o.examiner + 1) * k];
        let b0 = l.n * k + o.item * k;
        let b = &draw[b0..b0 + k];
        let mut groups: [Vec<f64>; 3] = Default::default();
        for leaf in 0..self.tree.n_leaves() {
            groups[self.tree.group(leaf).index()].push(self.tree.leaf_logprob_unchecked(th, b, leaf));
        }
        for (slot, g) in out.iter_mut().zip(&groups) {
            *slot = if g.is_empty() { f64::NEG_INFINITY } else { log_sum_exp(g) };
        }
    }
}

/// Posterior medians of `theta` and `b`, row-major `[rows x K]`.
pub fn median_effects(d: &DrawSet, model: &IRTreeModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = model.layout();
    Ok((
        block_medians(d, "theta", l.n * l.k)?,
        block_medians(d, "b", l.j * l.k)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedResponse {
    pub examiner_id: String,
    pub item_id: String,
    pub observed: String,
    pub predicted: String,
    /// Leaf probabilities in tree leaf order.
    pub probs: Vec<f64>,
}

/// Responses whose observed leaf differs from the most probable leaf at
/// posterior medians, when that leaf has probability at least `threshold`.
pub fn flag_unexpected(d: &DrawSet, model: &IRTreeModel, threshold: f64) -> Result<Vec<FlaggedResponse>> {
    let (theta, b) = median_effects(d, model)?;
    let k = model.tree.n_nodes();
    let names = model.tree.leaf_names();
    let mut out = Vec::new();
    for o in &model.data.obs {
        let probs = model
            .tree
            .leaf_probs(&theta[o.examiner * k..(o.examiner + 1) * k], &b[o.item * k..(o.item + 1) * k])?;
        let best = argmax(&probs);
        if best != o.category && probs[best] >= threshold {
            out.push(FlaggedResponse {
                examiner_id: model.data.examiners.id(o.examiner).to_string(),
                item_id: model.data.items.id(o.item).to_string(),
                observed: names[o.category].clone(),
                predicted: names[best].clone(),
                probs,
            });
        }
    }
    Ok(out)
}

pub fn write_flags_csv<W: std::io::Write>(flags: &[FlaggedResponse], tree: &TreeSpec, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["examiner_id".to_string(), "item_id".into(), "observed".into(), "predicted".into()];
    header.extend(tree.leaf_names().iter().map(|n| format!("p_{n}")));
    wtr.write_record(&header)?;
    for f in flags {
        let mut row = vec![f.examiner_id.clone(), f.item_id.clone(), f.observed.clone(), f.predicted.clone()];
        row.extend(f.probs.iter().map(|p| format!("{p}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub node: usize,
    pub parameter: String,
    pub mean: f64,
    pub median: f64,
    #[serde(rename = "q5")]
    pub q5: f64,
    #[serde(rename = "q95")]
    pub q95: f64,
    #[serde(rename = "q2.5")]
    pub q2_5: f64,
    #[serde(rename = "q97.5")]
    pub q97_5: f64,
}

/// Per-node `beta0`, `beta1` with 90% and 95% intervals.
pub fn coefficient_table(d: &DrawSet, k: usize) -> Result<Vec<CoefficientRow>> {
    let mut rows = Vec::new();
    for a in 0..k {
        for block in ["beta0", "beta1"] {
            let name = format!("{block}[{}]", a + 1);
            let col = d
                .index_of(&name)
                .ok_or_else(|| Error::Mismatch(format!("draws lack {name}")))?;
            let mut v = d.column(col);
            v.sort_by(f64::total_cmp);
            rows.push(CoefficientRow {
                node: a + 1,
                parameter: block.to_string(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: quantile_sorted(&v, 0.5),
                q5: quantile_sorted(&v, 0.05),
                q95: quantile_sorted(&v, 0.95),
                q2_5: quantile_sorted(&v, 0.025),
                q97_5: quantile_sorted(&v, 0.975),
            });
        }
    }
    Ok(rows)
}
