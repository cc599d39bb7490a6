//! Answer keys on the conclusiveness scale and their pairwise disagreement.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{CategoricalData, Conclusiveness};
use crate::engine::DrawSet;
use crate::error::{Error, Result};
use crate::models::consensus::{ConsensusModel, ConsensusVariant};
use crate::models::irtree::IRTreeModel;
use crate::models::{argmax, block_columns};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeySource {
    Modal,
    Ltrm,
    Cltrm,
    Altrm,
    IRTree,
}

impl KeySource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Modal => "Modal",
            Self::Ltrm => "LTRM",
            Self::Cltrm => "C-LTRM",
            Self::Altrm => "A-LTRM",
            Self::IRTree => "IRTree",
        }
    }
}

impl From<ConsensusVariant> for KeySource {
    fn from(v: ConsensusVariant) -> Self {
        match v {
            ConsensusVariant::Ltrm => Self::Ltrm,
            ConsensusVariant::Cltrm => Self::Cltrm,
            ConsensusVariant::Altrm => Self::Altrm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PointEstimate {
    #[default]
    Median,
    Mean,
}

/// Same-source call at the match node, IRTree keys only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchCall {
    pub is_match: bool,
    pub p_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyEntry {
    pub item_id: String,
    pub category: Conclusiveness,
    /// Set when the category was chosen by a tie-break or sits on a boundary.
    pub tie: bool,
    pub auxiliary: Option<MatchCall>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerKey {
    pub source: KeySource,
    pub entries: Vec<KeyEntry>,
}

impl AnswerKey {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&KeyEntry> {
        self.entries.iter().find(|e| e.item_id == item_id)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["item_id", "category", "source", "tie_flag", "match", "p_match"])?;
        for e in &self.entries {
            let (m, p) = match e.auxiliary {
                Some(a) => (if a.is_match { "Match" } else { "NonMatch" }.to_string(), a.p_match.to_string()),
                None => (String::new(), String::new()),
            };
            wtr.write_record([
                e.item_id.as_str(),
                &e.category.to_string(),
                self.source.name(),
                if e.tie { "true" } else { "false" },
                &m,
                &p,
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_scale(data: &CategoricalData) -> Result<()> {
    if data.n_categories != 3 {
        return Err(Error::Shape(format!(
            "answer keys use the three-level conclusiveness scale, got {} categories",
            data.n_categories
        )));
    }
    Ok(())
}

/// Most frequent observed category per item. Ties go to the less conclusive
/// category and are flagged. Items without responses are omitted.
pub fn modal_key(data: &CategoricalData) -> Result<AnswerKey> {
    check_scale(data)?;
    let entries = data
        .item_counts()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.iter().sum::<usize>() > 0)
        .map(|(j, counts)| {
            let best = counts.iter().copied().max().unwrap_or(0);
            let first = counts.iter().position(|&c| c == best).unwrap();
            KeyEntry {
                item_id: data.items.id(j).to_string(),
                category: Conclusiveness::from_index(first).unwrap(),
                tie: counts.iter().filter(|&&c| c == best).count() > 1,
                auxiliary: None,
            }
        })
        .collect();
    Ok(AnswerKey {
        source: KeySource::Modal,
        entries,
    })
}

/// NoValue for `T <= γ1`, Inconclusive for `γ1 < T <= γ2`, Conclusive above.
/// Values exactly on a boundary are flagged.
pub fn threshold_key(items: &[String], t: &[f64], gamma: &[f64], source: KeySource) -> Result<AnswerKey> {
    if gamma.len() != 2 {
        return Err(Error::Shape(format!("two boundaries expected, got {}", gamma.len())));
    }
    if !(gamma[0] < gamma[1]) {
        return Err(Error::Domain(format!("boundaries {gamma:?} are not increasing")));
    }
    if items.len() != t.len() {
        return Err(Error::Shape(format!("{} items, {} locations", items.len(), t.len())));
    }
    let entries = items
        .iter()
        .zip(t)
        .map(|(id, &tj)| {
            let idx = gamma.iter().filter(|&&g| tj > g).count();
            KeyEntry {
                item_id: id.clone(),
                category: Conclusiveness::from_index(idx).unwrap(),
                tie: gamma.contains(&tj),
                auxiliary: None,
            }
        })
        .collect();
    Ok(AnswerKey { source, entries })
}

fn block_point(d: &DrawSet, block: &str, expected: usize, est: PointEstimate) -> Result<Vec<f64>> {
    Ok(block_columns(d, block, expected)?
        .into_iter()
        .map(|c| match est {
            PointEstimate::Median => d.median(c),
            PointEstimate::Mean => d.mean(c),
        })
        .collect())
}

/// Threshold key from a consensus fit at point estimates of `T` and `gamma`.
pub fn consensus_key(d: &DrawSet, model: &ConsensusModel, est: PointEstimate) -> Result<AnswerKey> {
    let items = model.data().items.ids();
    let t = block_point(d, "T", items.len(), est)?;
    let gamma = block_point(d, "gamma", model.data().n_categories - 1, est)?;
    threshold_key(items, &t, &gamma, model.variant().into())
}

/// Key of an unbiased examiner (`θ = 0` at every node) facing each item at
/// point-estimate item parameters: the most probable leaf, grouped onto the
/// conclusiveness scale. The match node's call is kept as auxiliary output.
pub fn irtree_key(d: &DrawSet, model: &IRTreeModel, est: PointEstimate) -> Result<AnswerKey> {
    let tree = model.tree();
    let k = tree.n_nodes();
    let items = model.data().items.ids();
    let b = block_point(d, "b", items.len() * k, est)?;
    let zero = vec![0.0; k];
    // deepest node shared by the individualization and exclusion paths
    let match_node = match (tree.leaf_index("Individualization"), tree.leaf_index("Exclusion")) {
        (Some(i), Some(e)) => tree
            .path(i)
            .iter()
            .zip(tree.path(e))
            .take_while(|(a, b)| a.0 == b.0)
            .last()
            .map(|(a, _)| *a),
        _ => None,
    };
    let entries = items
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let bj = &b[j * k..(j + 1) * k];
            let probs = tree.leaf_probs(&zero, bj)?;
            let best = argmax(&probs);
            let tie = probs.iter().enumerate().any(|(l, &p)| l != best && p == probs[best]);
            let auxiliary = match_node.map(|(node, one)| {
                let p_one = sigmoid(-bj[node]);
                let p_match = if one { p_one } else { 1.0 - p_one };
                MatchCall {
                    is_match: p_match >= 0.5,
                    p_match,
                }
            });
            Ok(KeyEntry {
                item_id: id.clone(),
                category: tree.group(best),
                tie,
                auxiliary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnswerKey {
        source: KeySource::IRTree,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreementRow {
    pub item_id: String,
    pub categories: Vec<Conclusiveness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Disagreement {
    pub sources: Vec<KeySource>,
    /// Symmetric `[key][key]` counts of items with differing categories.
    pub counts: Vec<Vec<usize>>,
    pub detail: Vec<DisagreementRow>,
}

impl Disagreement {
    pub fn write_matrix_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["key".to_string()];
        header.extend(self.sources.iter().map(|s| s.name().to_string()));
        wtr.write_record(&header)?;
        for (s, row) in self.sources.iter().zip(&self.counts) {
            let mut r = vec![s.name().to_string()];
            r.extend(row.iter().map(|c| c.to_string()));
            wtr.write_record(&r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_detail_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["item_id".to_string()];
        header.extend(self.sources.iter().map(|s| s.name().to_string()));
        wtr.write_record(&header)?;
        for row in &self.detail {
            let mut r = vec![row.item_id.clone()];
            r.extend(row.categories.iter().map(|c| c.to_string()));
            wtr.write_record(&r)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Pairwise disagreement counts between keys over an identical item set.
pub fn disagreement_matrix(keys: &[AnswerKey]) -> Result<Disagreement> {
    let maps: Vec<BTreeMap<&str, Conclusiveness>> = keys
        .iter()
        .map(|k| k.entries.iter().map(|e| (e.item_id.as_str(), e.category)).collect())
        .collect();
    if let Some(first) = maps.first() {
        for (k, m) in keys.iter().zip(&maps).skip(1) {
            if m.len() != first.len() || !m.keys().eq(first.keys()) {
                return Err(Error::Mismatch(format!(
                    "{} key covers a different item set than {}",
                    k.source.name(),
                    keys[0].source.name()
                )));
            }
        }
    }
    let n = keys.len();
    let mut counts = vec![vec![0; n]; n];
    let mut detail = Vec::new();
    if let Some(first) = maps.first() {
        for item in first.keys() {
            let cats: Vec<Conclusiveness> = maps.iter().map(|m| m[item]).collect();
            let mut any = false;
            for a in 0..n {
                for b in a + 1..n {
                    if cats[a] != cats[b] {
                        counts[a][b] += 1;
                        counts[b][a] += 1;
                        any = true;
                    }
                }
            }
            if any {
                detail.push(DisagreementRow {
                    item_id: item.to_string(),
                    categories: cats,
                });
            }
        }
    }
    Ok(Disagreement {
        sources: keys.iter().map(|k| k.source).collect(),
        counts,
        detail,
    })
}
