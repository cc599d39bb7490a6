//! Posterior draws and their summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnose_columns, Convergence};
use crate::error::{Error, Result};
use crate::math::quantile_sorted;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub divergences: usize,
    pub tree_depths: Vec<u8>,
    pub step_size: f64,
    pub mean_accept: f64,
    pub n_leapfrog: u64,
    pub inv_metric: Vec<f64>,
}

impl ChainStats {
    pub fn divergence_fraction(&self) -> f64 {
        if self.tree_depths.is_empty() {
            0.0
        } else {
            self.divergences as f64 / self.tree_depths.len() as f64
        }
    }
}

/// Draws laid out `[chain][iteration][parameter]` on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet {
    names: Vec<String>,
    n_chains: usize,
    n_iter: usize,
    values: Vec<f64>,
    pub stats: Vec<ChainStats>,
}

impl DrawSet {
    pub fn new(names: Vec<String>, chains: Vec<Vec<Vec<f64>>>, stats: Vec<ChainStats>) -> Result<Self> {
        let n_chains = chains.len();
        if n_chains == 0 {
            return Err(Error::EmptyData("draw set needs at least one chain".into()));
        }
        let n_iter = chains[0].len();
        let n_params = names.len();
        let mut values = Vec::with_capacity(n_chains * n_iter * n_params);
        for chain in &chains {
            if chain.len() != n_iter {
                return Err(Error::Shape("chains have different lengths".into()));
            }
            for draw in chain {
                if draw.len() != n_params {
                    return Err(Error::Shape(format!(
                        "draw has {} values for {} names",
                        draw.len(),
                        n_params
                    )));
                }
                values.extend_from_slice(draw);
            }
        }
        Ok(Self {
            names,
            n_chains,
            n_iter,
            values,
            stats,
        })
    }

    /// A single-chain draw set holding `copies` identical draws of `point`.
    pub fn point_mass(names: Vec<String>, point: &[f64], copies: usize) -> Result<Self> {
        Self::new(names, vec![vec![point.to_vec(); copies]], Vec::new())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_iter(&self) -> usize {
        self.n_iter
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_iter
    }

    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let p = self.n_params();
        let start = (chain * self.n_iter + iter) * p;
        &self.values[start..start + p]
    }

    /// All draws flattened chain by chain.
    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_params().max(1))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Column indices of a block: `name` itself or `name[...]` elements.
    pub fn block_indices(&self, block: &str) -> Vec<usize> {
        let prefix = format!("{block}[");
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| *n == block || n.starts_with(&prefix))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn chain_column(&self, param: usize, chain: usize) -> Vec<f64> {
        (0..self.n_iter).map(|t| self.draw(chain, t)[param]).collect()
    }

    pub fn column(&self, param: usize) -> Vec<f64> {
        self.draws().map(|d| d[param]).collect()
    }

    pub fn mean(&self, param: usize) -> f64 {
        let c = self.column(param);
        c.iter().sum::<f64>() / c.len() as f64
    }

    pub fn quantile(&self, param: usize, q: f64) -> f64 {
        let mut c = self.column(param);
        c.sort_by(f64::total_cmp);
        quantile_sorted(&c, q)
    }

    pub fn median(&self, param: usize) -> f64 {
        self.quantile(param, 0.5)
    }

    /// Per-parameter posterior medians, in name order.
    pub fn medians(&self) -> Vec<f64> {
        (0..self.n_params()).map(|p| self.median(p)).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.n_params()).map(|p| self.mean(p)).collect()
    }

    pub fn total_divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    /// True when more than 20% of transitions diverged in any chain.
    pub fn divergence_flag(&self) -> bool {
        self.stats.iter().any(|s| s.divergence_fraction() > 0.2)
    }

    pub fn summarize(&self) -> Vec<ParamSummary> {
        let conv = diagnose_columns(self);
        (0..self.n_params())
            .map(|p| ParamSummary::from_column(&self.names[p], self.column(p), &conv[p]))
            .collect()
    }

    /// Long-format CSV with columns `chain,iter,name,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["chain", "iter", "name", "value"])?;
        for c in 0..self.n_chains {
            for t in 0..self.n_iter {
                for (name, v) in self.names.iter().zip(self.draw(c, t)) {
                    wr.write_record([
                        (c + 1).to_string(),
                        (t + 1).to_string(),
                        name.clone(),
                        format!("{v:.17e}"),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut names: Vec<String> = Vec::new();
        let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
        for row in rd.records() {
            let row = row?;
            let parse_idx = |i: usize| -> Result<usize> {
                row.get(i)
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Shape(format!("bad index in draws row {row:?}")))
            };
            let (c, t) = (parse_idx(0)? - 1, parse_idx(1)? - 1);
            let name = row.get(2).unwrap_or("").to_string();
            let value: f64 = row
                .get(3)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Shape(format!("bad value in draws row {row:?}")))?;
            while chains.len() <= c {
                chains.push(Vec::new());
            }
            while chains[c].len() <= t {
                chains[c].push(Vec::new());
            }
            if c == 0 && t == 0 {
                names.push(name);
            }
            chains[c][t].push(value);
        }
        Self::new(names, chains, Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q5: f64,
    pub q95: f64,
    pub q97_5: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub degenerate: bool,
}

impl ParamSummary {
    fn from_column(name: &str, mut col: Vec<f64>, conv: &Convergence) -> Self {
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = if col.len() > 1 {
            col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        col.sort_by(f64::total_cmp);
        Self {
            name: name.to_string(),
            mean,
            median: quantile_sorted(&col, 0.5),
            sd: var.sqrt(),
            q2_5: quantile_sorted(&col, 0.025),
            q5: quantile_sorted(&col, 0.05),
            q95: quantile_sorted(&col, 0.95),
            q97_5: quantile_sorted(&col, 0.975),
            rhat: conv.rhat,
            ess: conv.ess,
            degenerate: conv.degenerate,
        }
    }
}

/// Looks up a parameter by name in a list of summaries.
pub fn find_summary<'a>(summaries: &'a [ParamSummary], name: &str) -> Option<&'a ParamSummary> {
    summaries.iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DrawSet {
        let chains = vec![
            vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0], vec![4.0, 40.0]],
            vec![vec![5.0, 50.0], vec![6.0, 60.0], vec![7.0, 70.0], vec![8.0, 80.0]],
        ];
        DrawSet::new(vec!["a".into(), "b[1]".into()], chains, vec![]).unwrap()
    }

    #[test]
    fn layout_and_lookup() {
        let d = toy();
        assert_eq!(d.draw(1, 0), &[5.0, 50.0]);
        assert_eq!(d.column(0), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(d.block_indices("b"), vec![1]);
        assert_eq!(d.median(0), 4.5);
    }

    #[test]
    fn csv_round_trip() {
        let d = toy();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DrawSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.names(), d.names());
        assert_eq!(back.column(1), d.column(1));
    }

    #[test]
    fn summary_fields() {
        let s = toy().summarize();
        assert_eq!(s[0].mean, 4.5);
        assert!(s[0].q2_5 < s[0].q5 && s[0].q95 < s[0].q97_5);
        assert!(s[0].rhat.is_some());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let chains = vec![vec![vec![1.0]], vec![vec![1.0], vec![2.0]]];
        assert!(DrawSet::new(vec!["a".into()], chains, vec![]).is_err());
    }
}
