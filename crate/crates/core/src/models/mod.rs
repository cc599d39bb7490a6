//! Posterior models for examiner response data.

pub mod consensus;
pub mod irtree;
pub mod joint;
pub mod rasch;
pub mod tree;

use crate::data::{CategoricalData, CategoricalObs, IdIndex};
use crate::engine::DrawSet;
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// Categorical observations a fitted model assigns probabilities to.
///
/// Draws passed in are in the model's output layout
/// ([`LogDensityModel::output_names`](crate::engine::LogDensityModel::output_names)).
pub trait ObservationModel: Sync {
    fn n_obs(&self) -> usize;

    fn n_categories(&self, obs: usize) -> usize;

    fn observed(&self, obs: usize) -> usize;

    /// Label of the observation set, e.g. `conclusiveness`. Pointwise
    /// log-likelihoods are only comparable between models with equal labels.
    fn grouping(&self) -> String;

    /// Log probability of each category of observation `obs`.
    fn category_logprobs(&self, draw: &[f64], obs: usize, out: &mut [f64]);

    fn pointwise_loglik(&self, draw: &[f64], out: &mut [f64]) {
        let mut buf = vec![0.0; 8];
        for (o, slot) in out.iter_mut().enumerate().take(self.n_obs()) {
            let k = self.n_categories(o);
            if buf.len() < k {
                buf.resize(k, 0.0);
            }
            self.category_logprobs(draw, o, &mut buf[..k]);
            *slot = buf[self.observed(o)];
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Normalizes log weights into log probabilities.
pub fn log_normalize(values: &mut [f64]) {
    let z = log_sum_exp(values);
    values.iter_mut().for_each(|v| *v -= z);
}

/// Re-expresses categorical observations on another (sub)index, dropping
/// observations whose examiner or item is absent from it.
pub fn reindex(data: &CategoricalData, examiners: &IdIndex, items: &IdIndex) -> Result<CategoricalData> {
    let obs = data
        .obs
        .iter()
        .filter_map(|o| {
            Some(CategoricalObs {
                examiner: examiners.index_of(data.examiners.id(o.examiner))?,
                item: items.index_of(data.items.id(o.item))?,
                category: o.category,
            })
        })
        .collect();
    CategoricalData::new(examiners.clone(), items.clone(), data.n_categories, obs)
}

/// Drops examiners and items without observations and re-indexes densely.
pub fn compact_categorical(data: &CategoricalData) -> Result<CategoricalData> {
    let mut used_e = vec![false; data.n_examiners()];
    let mut used_i = vec![false; data.n_items()];
    for o in &data.obs {
        used_e[o.examiner] = true;
        used_i[o.item] = true;
    }
    let examiners = IdIndex::from_ids(
        (0..data.n_examiners())
            .filter(|&i| used_e[i])
            .map(|i| data.examiners.id(i).to_string()),
    );
    let items = IdIndex::from_ids(
        (0..data.n_items())
            .filter(|&i| used_i[i])
            .map(|i| data.items.id(i).to_string()),
    );
    reindex(data, &examiners, &items)
}

/// Column indices of a named block in a draw set, checked against an
/// expected element count.
pub fn block_columns(d: &DrawSet, block: &str, expected: usize) -> Result<Vec<usize>> {
    let cols = d.block_indices(block);
    if cols.len() != expected {
        return Err(Error::Mismatch(format!(
            "draws hold {} values for block {block}, expected {expected}",
            cols.len()
        )));
    }
    Ok(cols)
}

/// Posterior medians of a block, in element order.
pub fn block_medians(d: &DrawSet, block: &str, expected: usize) -> Result<Vec<f64>> {
    Ok(block_columns(d, block, expected)?
        .into_iter()
        .map(|c| d.median(c))
        .collect())
}
