//! From-scratch classifiers: penalized logistic regression and Gini random forests.

pub mod forest;
pub mod logistic;
pub mod tree;

use serde::{Deserialize, Serialize};

pub use forest::{impurity_importances, predict_proba_forest, train_forest, ForestParams, RandomForestModel};
pub use logistic::{
    logistic_objective, predict_proba_logistic, train_logistic, train_logistic_from, LogisticModel, LogisticParams,
};
pub use tree::{best_split, train_tree, DecisionTree, MaxFeatures, Node, TreeParams};

use crate::error::Result;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum TrainedModel {
    Logistic(LogisticModel),
    Forest(RandomForestModel),
}

impl TrainedModel {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Logistic(m) => predict_proba_logistic(m, x),
            TrainedModel::Forest(m) => predict_proba_forest(m, x),
        }
    }
}
