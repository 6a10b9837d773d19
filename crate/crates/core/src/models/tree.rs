//! Gini classification trees.
//!
//! Split quality is compared in exact integer arithmetic so that tie-breaking
//! (lowest feature index, then lowest threshold) is reproducible.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    #[default]
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (p as f64).sqrt().floor() as usize,
            MaxFeatures::All => p,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
        n_positive: usize,
        /// `gini(node) − (nₗ/n)·gini(left) − (nᵣ/n)·gini(right)`
        impurity_decrease: f64,
    },
    Leaf {
        n: usize,
        n_positive: usize,
    },
}

impl Node {
    pub fn n(&self) -> usize {
        match self {
            Node::Split { n, .. } | Node::Leaf { n, .. } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

pub fn gini(n: usize, n_positive: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = n_positive as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub n_left: usize,
    pub pos_left: usize,
}

/// Split score `(pₗ² + qₗ²)/nₗ + (pᵣ² + qᵣ²)/nᵣ` as a fraction; larger is purer.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(n_left: usize, pos_left: usize, n: usize, pos: usize) -> Self {
        let (nl, pl) = (n_left as u128, pos_left as u128);
        let (nr, pr) = ((n - n_left) as u128, (pos - pos_left) as u128);
        let a = pl * pl + (nl - pl) * (nl - pl);
        let b = pr * pr + (nr - pr) * (nr - pr);
        Score {
            num: a * nr + b * nl,
            den: nl * nr,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Best admissible split of `rows` over `candidates` (scanned in ascending order).
pub fn best_split(x: &Matrix, y: &[bool], rows: &[usize], candidates: &[usize], min_samples_leaf: usize) -> Option<SplitChoice> {
    let n = rows.len();
    let pos = rows.iter().filter(|&&r| y[r]).count();
    let min_leaf = min_samples_leaf.max(1);
    let mut best: Option<(Score, SplitChoice)> = None;
    let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(n);
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    for &f in &cands {
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (x.get(r, f), y[r])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pos_left = 0;
        for i in 1..n {
            pos_left += usize::from(sorted[i - 1].1);
            let (lo, hi) = (sorted[i - 1].0, sorted[i].0);
            if lo == hi || i < min_leaf || n - i < min_leaf {
                continue;
            }
            let score = Score::new(i, pos_left, n, pos);
            if best.as_ref().map_or(true, |(b, _)| score.beats(b)) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some((
                    score,
                    SplitChoice {
                        feature: f,
                        threshold,
                        n_left: i,
                        pos_left,
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Grows a tree on all rows of `x`.
pub fn train_tree(x: &Matrix, y: &[bool], params: &TreeParams, rng: &mut Rng) -> Result<DecisionTree> {
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    train_tree_on(x, y, &rows, params, rng)
}

/// Grows a tree on a row multiset (bootstrap samples repeat rows).
pub fn train_tree_on(x: &Matrix, y: &[bool], rows: &[usize], params: &TreeParams, rng: &mut Rng) -> Result<DecisionTree> {
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    let p = x.n_cols();
    let k = params.max_features.resolve(p);
    let min_leaf = params.min_samples_leaf.max(1);
    let mut nodes: Vec<Node> = Vec::new();
    // (node slot, rows)
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, rows.to_vec())];
    nodes.push(Node::Leaf { n: 0, n_positive: 0 });
    while let Some((slot, node_rows)) = stack.pop() {
        let n = node_rows.len();
        assert!(n > 0, "empty node");
        let n_positive = node_rows.iter().filter(|&&r| y[r]).count();
        let leaf = Node::Leaf { n, n_positive };
        if n_positive == 0 || n_positive == n || n < 2 * min_leaf || p == 0 {
            nodes[slot] = leaf;
            continue;
        }
        let candidates = sample(rng, p, k).into_vec();
        let Some(choice) = best_split(x, y, &node_rows, &candidates, min_leaf) else {
            nodes[slot] = leaf;
            continue;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            node_rows.iter().partition(|&&r| x.get(r, choice.feature) <= choice.threshold);
        debug_assert_eq!(left_rows.len(), choice.n_left);
        let (nl, nr) = (left_rows.len(), right_rows.len());
        let pr = n_positive - choice.pos_left;
        let decrease = gini(n, n_positive)
            - (nl as f64 / n as f64) * gini(nl, choice.pos_left)
            - (nr as f64 / n as f64) * gini(nr, pr);
        let left = nodes.len();
        nodes.push(Node::Leaf { n: 0, n_positive: 0 });
        let right = nodes.len();
        nodes.push(Node::Leaf { n: 0, n_positive: 0 });
        nodes[slot] = Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left,
            right,
            n,
            n_positive,
            impurity_decrease: decrease.max(0.0),
        };
        stack.push((right, right_rows));
        stack.push((left, left_rows));
    }
    Ok(DecisionTree { nodes, n_features: p })
}

impl DecisionTree {
    /// Positive fraction of the leaf reached by `x`.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { n, n_positive } => return *n_positive as f64 / *n as f64,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.n_cols(),
            });
        }
        Ok((0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. }))
    }

    /// Per-feature `Σ (n_node / n_root) · impurity_decrease`, normalized to sum 1
    /// (all zeros when the tree never splits).
    pub fn importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        let root_n = self.nodes[0].n() as f64;
        for node in &self.nodes {
            if let Node::Split {
                feature,
                n,
                impurity_decrease,
                ..
            } = node
            {
                imp[*feature] += (*n as f64 / root_n) * impurity_decrease;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng as _;

    #[test]
    fn single_perfect_split() {
        let x = Matrix::from_rows(&[vec![0.0], vec![0.2], vec![0.8], vec![1.0]]).unwrap();
        let y = [false, false, true, true];
        let t = train_tree(&x, &y, &TreeParams::default(), &mut substream(0, 0)).unwrap();
        assert_eq!(t.nodes.len(), 3);
        match t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.5);
            }
            _ => panic!("expected split"),
        }
        assert!(t.leaves().all(|l| matches!(l, Node::Leaf { n, n_positive } if *n_positive == 0 || n_positive == n)));
    }

    #[test]
    fn min_leaf_equal_to_n_gives_stump() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let y = [false, true, false, true];
        let params = TreeParams {
            min_samples_leaf: 4,
            max_features: MaxFeatures::All,
        };
        let t = train_tree(&x, &y, &params, &mut substream(0, 0)).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { n: 4, n_positive: 2 }]);
        assert_eq!(t.predict_row(&[9.0]), 0.5);
    }

    #[test]
    fn six_sample_split_matches_enumeration() {
        // Exhaustive over both features by hand: feature 1 at 2.5 isolates
        // {T,T,T} | {F,F,T} (score 3 + 5/3); feature 0 best is 1.5 giving
        // {F} | {F,T,T,T,F} (score 1 + 13/5). 14/3 > 18/5.
        let x = Matrix::from_rows(&[
            vec![1.0, 3.0],
            vec![2.0, 1.0],
            vec![3.0, 2.0],
            vec![4.0, 1.5],
            vec![5.0, 4.0],
            vec![6.0, 5.0],
        ])
        .unwrap();
        let y = [false, true, true, true, false, true];
        let s = best_split(&x, &y, &[0, 1, 2, 3, 4, 5], &[0, 1], 1).unwrap();
        assert_eq!((s.feature, s.threshold), (1, 2.5));
    }

    #[test]
    fn exact_ties_go_to_lowest_feature() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let s = best_split(&x, &[false, true], &[0, 1], &[1, 0], 1).unwrap();
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn distinct_rows_fit_perfectly() {
        let mut rng = substream(3, 0);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let y: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.5)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let params = TreeParams {
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
        };
        let t = train_tree(&x, &y, &params, &mut substream(3, 1)).unwrap();
        let pred = t.predict(&x).unwrap();
        for (p, &yy) in pred.iter().zip(&y) {
            assert_eq!(*p, if yy { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn hand_computed_importances() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let y = [false, true, true, false];
        let params = TreeParams {
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
        };
        let t = train_tree(&x, &y, &params, &mut substream(0, 0)).unwrap();
        // Candidate splits at the root: f0 -> {F,T,T}|{F}: score 5/3+1 = 8/3;
        // f1 -> {F,F}|{T,T}: score 2+2 = 4. So f1 wins at the root and the
        // tree is a single split with decrease 0.5 - 0 = 0.5.
        assert_eq!(t.importances(), vec![0.0, 1.0]);
        // Two-split instance: y depends on both features.
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let y = [false, false, false, true, true];
        let t = train_tree(&x, &y, &params, &mut substream(0, 0)).unwrap();
        // root: f0 -> {F,F}|{F,T,T} score 2 + 5/3 = 11/3 ; f1 -> {F,F}|{F,T,T} same, tie -> f0.
        // gini root = 2*(2/5)(3/5) = 0.48 ; right gini = 4/9
        // decrease_root = 0.48 - (3/5)(4/9) = 0.21333..
        // right node {F,T,T} split on f1: decrease 4/9, weight 3/5 -> 4/15
        let d0 = 0.48 - 0.6 * (4.0 / 9.0);
        let d1 = 0.6 * (4.0 / 9.0);
        let imp = t.importances();
        assert!((imp[0] - d0 / (d0 + d1)).abs() < 1e-12);
        assert!((imp[1] - d1 / (d0 + d1)).abs() < 1e-12);
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(36), 6);
        assert_eq!(MaxFeatures::Sqrt.resolve(2), 1);
        assert_eq!(MaxFeatures::All.resolve(5), 5);
        assert_eq!(MaxFeatures::Count(9).resolve(5), 5);
    }
}
