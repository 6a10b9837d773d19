use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{train_tree_on, DecisionTree, MaxFeatures, TreeParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            bootstrap: true,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
        }
    }
}

impl ForestParams {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            min_samples_leaf: self.min_samples_leaf,
            max_features: self.max_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub params: ForestParams,
    /// Normalized impurity importances, summing to 1.
    pub importances: Vec<f64>,
    pub seed: u64,
}

/// Trains `n_estimators` trees; tree `t` draws all its randomness from `substream(seed, t)`.
pub fn train_forest(x: &Matrix, y: &[bool], params: &ForestParams, seed: u64) -> Result<RandomForestModel> {
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    if y.iter().all(|&v| v) || !y.iter().any(|&v| v) {
        return Err(Error::SingleClass("random forest needs both classes".into()));
    }
    if params.n_estimators == 0 {
        return Err(Error::InvalidArgument("n_estimators must be positive".into()));
    }
    let n = x.n_rows();
    let tree_params = params.tree_params();
    let trees: Vec<DecisionTree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            train_tree_on(x, y, &rows, &tree_params, &mut rng)
        })
        .collect::<Result<_>>()?;
    let importances = impurity_importances(&trees);
    Ok(RandomForestModel {
        trees,
        params: *params,
        importances,
        seed,
    })
}

/// Mean of per-tree normalized importances, renormalized to sum 1.
pub fn impurity_importances(trees: &[DecisionTree]) -> Vec<f64> {
    let p = trees.first().map_or(0, |t| t.n_features);
    let mut total = vec![0.0; p];
    for t in trees {
        for (acc, v) in total.iter_mut().zip(t.importances()) {
            *acc += v;
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter().map(|v| v / sum).collect()
    } else {
        log::warn!("forest has no impurity decrease; importances set uniform");
        vec![1.0 / p.max(1) as f64; p]
    }
}

pub fn predict_proba_forest(forest: &RandomForestModel, x: &Matrix) -> Result<Vec<f64>> {
    let p = forest.trees.first().map_or(0, |t| t.n_features);
    if x.n_cols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: x.n_cols(),
        });
    }
    let k = forest.trees.len() as f64;
    Ok((0..x.n_rows())
        .map(|i| {
            let row = x.row(i);
            forest.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
        })
        .collect())
}
