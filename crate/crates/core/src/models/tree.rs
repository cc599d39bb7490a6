//! Binary response trees with a Rasch model at every node.

use crate::data::{Conclusiveness, KeyResponse, SequentialResponse};
use crate::error::{Error, Result};
use crate::math::log_sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

/// One internal node: where the `Y* = 1` and `Y* = 0` branches lead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeNode {
    pub one: Child,
    pub zero: Child,
}

/// A rooted binary tree over leaf outcomes. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    nodes: Vec<TreeNode>,
    leaves: Vec<String>,
    groups: Vec<Conclusiveness>,
    /// Per leaf, the `(node, branch_is_one)` steps from the root.
    paths: Vec<Vec<(usize, bool)>>,
}

impl TreeSpec {
    /// Validates the structure: every node is reached exactly once from the
    /// root and every leaf is reached exactly once.
    pub fn new(nodes: Vec<TreeNode>, leaves: Vec<String>, groups: Vec<Conclusiveness>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Domain("a tree needs at least one node".into()));
        }
        if groups.len() != leaves.len() {
            return Err(Error::Shape("one conclusiveness group per leaf required".into()));
        }
        let mut node_seen = vec![false; nodes.len()];
        let mut paths: Vec<Option<Vec<(usize, bool)>>> = vec![None; leaves.len()];
        let mut stack = vec![(0usize, Vec::new())];
        node_seen[0] = true;
        while let Some((k, path)) = stack.pop() {
            for (child, bit) in [(nodes[k].one, true), (nodes[k].zero, false)] {
                let mut p: Vec<(usize, bool)> = path.clone();
                p.push((k, bit));
                match child {
                    Child::Node(c) => {
                        if c >= nodes.len() || node_seen[c] {
                            return Err(Error::Domain(format!("node {c} is missing or reached twice")));
                        }
                        node_seen[c] = true;
                        stack.push((c, p));
                    }
                    Child::Leaf(l) => {
                        if l >= leaves.len() || paths[l].is_some() {
                            return Err(Error::Domain(format!("leaf {l} is missing or reached twice")));
                        }
                        paths[l] = Some(p);
                    }
                }
            }
        }
        if node_seen.iter().any(|s| !s) {
            return Err(Error::Domain("tree has unreachable nodes".into()));
        }
        let paths = paths
            .into_iter()
            .enumerate()
            .map(|(l, p)| p.ok_or_else(|| Error::Domain(format!("leaf {l} is unreachable"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nodes,
            leaves,
            groups,
            paths,
        })
    }

    /// Five-node decision process tree with leaves in
    /// [`SequentialResponse::ALL`] order.
    ///
    /// Node 1: no value (1) vs has value. Node 2: insufficient (1) vs
    /// sufficient. Node 3: match (1) vs non-match. Node 4: individualization
    /// (1) vs close. Node 5: exclusion (1) vs no overlap.
    pub fn decision_process() -> Self {
        use Child::{Leaf, Node};
        let leaf = |s: SequentialResponse| Leaf(SequentialResponse::ALL.iter().position(|&x| x == s).unwrap());
        let nodes = vec![
            TreeNode {
                one: leaf(SequentialResponse::NoValue),
                zero: Node(1),
            },
            TreeNode {
                one: leaf(SequentialResponse::Insufficient),
                zero: Node(2),
            },
            TreeNode {
                one: Node(3),
                zero: Node(4),
            },
            TreeNode {
                one: leaf(SequentialResponse::Individualization),
                zero: leaf(SequentialResponse::Close),
            },
            TreeNode {
                one: leaf(SequentialResponse::Exclusion),
                zero: leaf(SequentialResponse::NoOverlap),
            },
        ];
        let leaves = SequentialResponse::ALL.iter().map(|s| s.name().to_string()).collect();
        let groups = SequentialResponse::ALL.iter().map(|s| s.conclusiveness()).collect();
        Self::new(nodes, leaves, groups).expect("decision process tree is well formed")
    }

    /// Three-node answer key tree with leaves in [`KeyResponse::ALL`] order.
    ///
    /// Node 1: no value (1) vs has value. Node 2: inconclusive (1) vs
    /// conclusive. Node 3: match, i.e. individualization (1), vs exclusion.
    pub fn answer_key() -> Self {
        use Child::{Leaf, Node};
        let nodes = vec![
            TreeNode {
                one: Leaf(0),
                zero: Node(1),
            },
            TreeNode {
                one: Leaf(1),
                zero: Node(2),
            },
            TreeNode {
                one: Leaf(2),
                zero: Leaf(3),
            },
        ];
        let leaves = KeyResponse::ALL.iter().map(|s| s.name().to_string()).collect();
        let groups = KeyResponse::ALL.iter().map(|s| s.conclusiveness()).collect();
        Self::new(nodes, leaves, groups).expect("answer key tree is well formed")
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_names(&self) -> &[String] {
        &self.leaves
    }

    pub fn leaf_index(&self, name: &str) -> Option<usize> {
        self.leaves.iter().position(|l| l == name)
    }

    pub fn group(&self, leaf: usize) -> Conclusiveness {
        self.groups[leaf]
    }

    pub fn path(&self, leaf: usize) -> &[(usize, bool)] {
        &self.paths[leaf]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    fn check_rows(&self, theta: &[f64], b: &[f64]) -> Result<()> {
        if theta.len() != self.nodes.len() || b.len() != self.nodes.len() {
            return Err(Error::Shape(format!(
                "tree has {} nodes, got {} person and {} item values",
                self.nodes.len(),
                theta.len(),
                b.len()
            )));
        }
        Ok(())
    }

    /// `log P(leaf)`: sum over the path of `log σ(±(θ_k − b_k))`.
    pub fn leaf_logprob(&self, theta: &[f64], b: &[f64], leaf: usize) -> Result<f64> {
        self.check_rows(theta, b)?;
        if leaf >= self.leaves.len() {
            return Err(Error::Domain(format!("leaf {leaf} not in tree")));
        }
        Ok(self.leaf_logprob_unchecked(theta, b, leaf))
    }

    #[inline]
    pub(crate) fn leaf_logprob_unchecked(&self, theta: &[f64], b: &[f64], leaf: usize) -> f64 {
        self.paths[leaf]
            .iter()
            .map(|&(k, one)| {
                let eta = theta[k] - b[k];
                log_sigmoid(if one { eta } else { -eta })
            })
            .sum()
    }

    pub fn leaf_logprobs(&self, theta: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(theta, b)?;
        Ok((0..self.leaves.len())
            .map(|l| self.leaf_logprob_unchecked(theta, b, l))
            .collect())
    }

    pub fn leaf_probs(&self, theta: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.leaf_logprobs(theta, b)?.into_iter().map(f64::exp).collect())
    }

    /// Leaf probabilities summed within conclusiveness groups.
    pub fn group_probs(&self, theta: &[f64], b: &[f64]) -> Result<[f64; 3]> {
        let p = self.leaf_probs(theta, b)?;
        let mut g = [0.0; 3];
        for (l, v) in p.iter().enumerate() {
            g[self.groups[l].index()] += v;
        }
        Ok(g)
    }
}
