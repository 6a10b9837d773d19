//! Cross-validation plumbing: per-fold preprocessing, model specs and grid search.
//!
//! Every fold fits its own [`PreprocessPlan`] on the training rows only and
//! applies it to the held-out rows. Designs are prepared once and reused by all
//! grid cells and feature subsets.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::roc_auc;
use crate::models::{
    predict_proba_logistic, train_forest, train_logistic, ForestParams, LogisticParams, MaxFeatures, TrainedModel,
};
use crate::preprocess::{Design, PreprocessConfig, PreprocessPlan};
use crate::rng::substream;
use crate::split::{fold_train_rows, kfold_indices};
use crate::table::DataTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CVConfig {
    pub k: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for CVConfig {
    fn default() -> Self {
        Self {
            k: 4,
            stratified: true,
            seed: 0,
        }
    }
}

/// Fold assignment; every fold must hold both classes.
pub fn cv_folds(labels: &[bool], cv: &CVConfig) -> Result<Vec<Vec<usize>>> {
    let folds = if cv.stratified {
        kfold_indices(labels, cv.k, cv.seed)?
    } else {
        if cv.k < 2 || labels.len() < cv.k {
            return Err(Error::InvalidArgument(format!("cannot make {} folds of {} rows", cv.k, labels.len())));
        }
        let mut rows: Vec<usize> = (0..labels.len()).collect();
        rows.shuffle(&mut substream(cv.seed, 1));
        let mut folds = vec![Vec::new(); cv.k];
        for (i, r) in rows.into_iter().enumerate() {
            folds[i % cv.k].push(r);
        }
        folds.iter_mut().for_each(|f| f.sort_unstable());
        folds
    };
    for (i, f) in folds.iter().enumerate() {
        let pos = f.iter().filter(|&&r| labels[r]).count();
        if pos == 0 || pos == f.len() {
            return Err(Error::SingleClass(format!("fold {i} holds a single class")));
        }
    }
    Ok(folds)
}

/// One fold's preprocessed train and held-out designs.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub plan: PreprocessPlan,
    pub train: Design,
    pub train_y: Vec<bool>,
    pub test: Design,
    pub test_y: Vec<bool>,
}

impl FoldData {
    pub fn names(&self) -> &[String] {
        &self.train.names
    }
}

/// Preprocesses every fold of `train` independently.
pub fn prepare_folds(
    train: &DataTable,
    outcome: &str,
    cv: &CVConfig,
    preprocess: &PreprocessConfig,
) -> Result<Vec<FoldData>> {
    let labels = train.labels(outcome)?;
    let folds = cv_folds(&labels, cv)?;
    let prepared = folds
        .par_iter()
        .enumerate()
        .map(|(i, held)| {
            let fit_rows = fold_train_rows(&folds, i);
            let fit = train.select_rows(&fit_rows);
            let (plan, train_design) = PreprocessPlan::fit(&fit, preprocess)?;
            let test = plan.transform(&train.select_rows(held))?;
            Ok(FoldData {
                plan,
                train: train_design,
                train_y: fit_rows.iter().map(|&r| labels[r]).collect(),
                test,
                test_y: held.iter().map(|&r| labels[r]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // plans can differ in their outputs when a fold loses a level or a column
    let names = &prepared[0].train.names;
    if prepared.iter().any(|f| &f.train.names != names) {
        log::warn!("fold designs differ in columns; subsets are resolved by name per fold");
    }
    Ok(prepared)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic { c: f64 },
    Forest(ForestParams),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Logistic { .. } => ModelKind::Lr,
            ModelSpec::Forest(_) => ModelKind::Rf,
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[bool], seed: u64) -> Result<TrainedModel> {
        Ok(match self {
            ModelSpec::Logistic { c } => TrainedModel::Logistic(train_logistic(x, y, &LogisticParams::with_c(*c))?),
            ModelSpec::Forest(p) => TrainedModel::Forest(train_forest(x, y, p, seed)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "LR")]
    Lr,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "RF",
            ModelKind::Lr => "LR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lr_c: Vec<f64>,
    pub rf_bootstrap: Vec<bool>,
    pub rf_max_features: Vec<MaxFeatures>,
    pub rf_min_samples_leaf: Vec<usize>,
    pub rf_n_estimators: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lr_c: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            rf_bootstrap: vec![true, false],
            rf_max_features: vec![MaxFeatures::Sqrt],
            rf_min_samples_leaf: vec![2, 4, 8, 18],
            rf_n_estimators: vec![50, 100, 200, 350, 500, 650, 800, 950],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lr_c.is_empty()
            || self.rf_bootstrap.is_empty()
            || self.rf_max_features.is_empty()
            || self.rf_min_samples_leaf.is_empty()
            || self.rf_n_estimators.is_empty()
        {
            return Err(Error::Config("grid axes must be non-empty".into()));
        }
        if self.lr_c.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("lr_c values must be positive and finite".into()));
        }
        if self.rf_min_samples_leaf.contains(&0) || self.rf_n_estimators.contains(&0) {
            return Err(Error::Config("min_samples_leaf and n_estimators must be positive".into()));
        }
        Ok(())
    }

    /// LR cells, C in listed order.
    pub fn lr_cells(&self) -> Vec<ModelSpec> {
        self.lr_c.iter().map(|&c| ModelSpec::Logistic { c }).collect()
    }

    /// RF cells with bootstrap outermost and n_estimators innermost.
    pub fn rf_cells(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for &bootstrap in &self.rf_bootstrap {
            for &max_features in &self.rf_max_features {
                for &min_samples_leaf in &self.rf_min_samples_leaf {
                    for &n_estimators in &self.rf_n_estimators {
                        out.push(ModelSpec::Forest(ForestParams {
                            n_estimators,
                            bootstrap,
                            max_features,
                            min_samples_leaf,
                        }));
                    }
                }
            }
        }
        out
    }

    pub fn cells(&self, kind: ModelKind) -> Vec<ModelSpec> {
        match kind {
            ModelKind::Lr => self.lr_cells(),
            ModelKind::Rf => self.rf_cells(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub params: ModelSpec,
    pub fold_auc: Vec<f64>,
    pub mean: f64,
    /// Population std over folds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: usize,
    pub cells: Vec<CellScore>,
}

impl GridResult {
    pub fn best_params(&self) -> ModelSpec {
        self.cells[self.best].params
    }

    pub fn best_score(&self) -> &CellScore {
        &self.cells[self.best]
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn resolve_columns(design: &Design, columns: &[String]) -> Result<Vec<usize>> {
    columns.iter().map(|c| design.index_of(c)).collect()
}

/// Column subset of a fold, tolerating names a fold's plan did not emit.
fn fold_columns(fold: &FoldData, columns: &[String]) -> Vec<usize> {
    columns.iter().filter_map(|c| fold.train.index_of(c).ok()).collect()
}

/// Held-out AUC of one LR fit on one fold.
pub fn lr_fold_auc(fold: &FoldData, cols: &[usize], c: f64) -> Result<f64> {
    let x = fold.train.x.select_columns(cols);
    let model = train_logistic(&x, &fold.train_y, &LogisticParams::with_c(c))?;
    let scores = predict_proba_logistic(&model, &fold.test.x.select_columns(cols))?;
    roc_auc(&scores, &fold.test_y)
}

/// Per-fold AUCs for every prefix size in `sizes` of one forest.
fn forest_prefix_aucs(fold: &FoldData, cols: &[usize], base: &ForestParams, sizes: &[usize], seed: u64) -> Result<Vec<f64>> {
    let largest = *sizes.iter().max().expect("non-empty sizes");
    let params = ForestParams {
        n_estimators: largest,
        ..*base
    };
    let x = fold.train.x.select_columns(cols);
    let forest = train_forest(&x, &fold.train_y, &params, seed)?;
    let test = fold.test.x.select_columns(cols);
    let per_tree: Vec<Vec<f64>> = forest
        .trees
        .iter()
        .map(|t| (0..test.n_rows()).map(|i| t.predict_row(test.row(i))).collect())
        .collect();
    sizes
        .iter()
        .map(|&n| {
            let scores: Vec<f64> = (0..test.n_rows())
                .map(|i| per_tree[..n].iter().map(|t| t[i]).sum::<f64>() / n as f64)
                .collect();
            roc_auc(&scores, &fold.test_y)
        })
        .collect()
}

/// Scores every cell on every fold; best = highest mean fold AUC, ties to the first cell.
///
/// Forest cells that differ only in `n_estimators` share one forest per fold:
/// tree `t` depends only on `(seed, t)`, so smaller forests are exact prefixes.
pub fn grid_search(folds: &[FoldData], columns: &[String], cells: &[ModelSpec], seed: u64) -> Result<GridResult> {
    if cells.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if columns.is_empty() {
        return Err(Error::InvalidArgument("no feature columns".into()));
    }
    let k = folds.len();
    let mut fold_auc: Vec<Vec<f64>> = vec![vec![f64::NAN; k]; cells.len()];

    // group forest cells by everything but n_estimators
    let mut groups: Vec<(ForestParams, Vec<usize>)> = Vec::new();
    let mut lr_cells = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        match cell {
            ModelSpec::Logistic { c } => lr_cells.push((i, *c)),
            ModelSpec::Forest(p) => {
                let key = ForestParams { n_estimators: 0, ..*p };
                match groups.iter_mut().find(|g| g.0 == key) {
                    Some(g) => g.1.push(i),
                    None => groups.push((key, vec![i])),
                }
            }
        }
    }

    let lr_jobs: Vec<(usize, usize, f64)> = lr_cells
        .iter()
        .flat_map(|&(i, c)| (0..k).map(move |f| (i, f, c)))
        .collect();
    let lr_results: Vec<((usize, usize), f64)> = lr_jobs
        .par_iter()
        .map(|&(i, f, c)| Ok(((i, f), lr_fold_auc(&folds[f], &fold_columns(&folds[f], columns), c)?)))
        .collect::<Result<_>>()?;
    for ((i, f), auc) in lr_results {
        fold_auc[i][f] = auc;
    }

    for (key, members) in &groups {
        let sizes: Vec<usize> = members
            .iter()
            .map(|&i| match cells[i] {
                ModelSpec::Forest(p) => p.n_estimators,
                ModelSpec::Logistic { .. } => unreachable!(),
            })
            .collect();
        for (f, fold) in folds.iter().enumerate() {
            let aucs = forest_prefix_aucs(fold, &fold_columns(fold, columns), key, &sizes, seed)?;
            for (&i, auc) in members.iter().zip(aucs) {
                fold_auc[i][f] = auc;
            }
        }
    }

    let scored: Vec<CellScore> = cells
        .iter()
        .zip(fold_auc)
        .map(|(params, aucs)| {
            let (mean, std) = mean_std(&aucs);
            CellScore {
                params: *params,
                fold_auc: aucs,
                mean,
                std,
            }
        })
        .collect();
    let mut best = 0;
    for (i, s) in scored.iter().enumerate() {
        if s.mean > scored[best].mean {
            best = i;
        }
    }
    Ok(GridResult { best, cells: scored })
}

/// Fits `spec` on a design restricted to `columns`.
pub fn fit_on(design: &Design, y: &[bool], columns: &[String], spec: &ModelSpec, seed: u64) -> Result<TrainedModel> {
    let cols = resolve_columns(design, columns)?;
    spec.fit(&design.x.select_columns(&cols), y, seed)
}

pub fn predict_on(model: &TrainedModel, design: &Design, columns: &[String]) -> Result<Vec<f64>> {
    let cols = resolve_columns(design, columns)?;
    model.predict_proba(&design.x.select_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::predict_proba_forest;
    use crate::table::{Category, ColumnData, ColumnSpec};
    use rand::Rng;

    fn planted(seed: u64, n: usize, signal: f64) -> DataTable {
        let mut rng = substream(seed, 7);
        let mut x0 = Vec::new();
        let mut x1 = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let p = 1.0 / (1.0 + (-signal * a).exp());
            x0.push(Some(a));
            x1.push(Some(b));
            y.push(Some(rng.gen_bool(p)));
        }
        DataTable::new(
            vec![
                ColumnSpec::numeric("a", Category::Environmental),
                ColumnSpec::numeric("b", Category::Environmental),
                ColumnSpec::binary("y", Category::Outcome),
            ],
            vec![ColumnData::Numeric(x0), ColumnData::Numeric(x1), ColumnData::Binary(y)],
        )
        .unwrap()
    }

    #[test]
    fn folds_are_fit_on_training_rows_only() {
        let t = planted(1, 80, 3.0);
        let cv = CVConfig { seed: 3, ..Default::default() };
        let folds = prepare_folds(&t, "y", &cv, &PreprocessConfig::default()).unwrap();
        assert_eq!(folds.len(), 4);
        let total: usize = folds.iter().map(|f| f.test_y.len()).sum();
        assert_eq!(total, 80);
        for f in &folds {
            let m = f.train.x.column(0).iter().sum::<f64>() / f.train.n_rows() as f64;
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn grid_order_and_single_cell() {
        let g = GridSpec::default();
        let rf = g.rf_cells();
        assert_eq!(rf.len(), 2 * 4 * 8);
        assert!(matches!(rf[0], ModelSpec::Forest(p) if p.bootstrap && p.min_samples_leaf == 2 && p.n_estimators == 50));
        assert!(matches!(rf[8], ModelSpec::Forest(p) if p.min_samples_leaf == 4 && p.n_estimators == 50));
        let t = planted(2, 60, 3.0);
        let folds = prepare_folds(&t, "y", &CVConfig::default(), &PreprocessConfig::default()).unwrap();
        let cols = vec!["a".to_string(), "b".to_string()];
        let r = grid_search(&folds, &cols, &[ModelSpec::Logistic { c: 1.0 }], 0).unwrap();
        assert_eq!(r.best, 0);
        // identical cells tie, first wins
        let r = grid_search(&folds, &cols, &[ModelSpec::Logistic { c: 1.0 }; 3], 0).unwrap();
        assert_eq!(r.best, 0);
    }

    #[test]
    fn forest_prefix_equals_separate_training() {
        let t = planted(3, 80, 3.0);
        let folds = prepare_folds(&t, "y", &CVConfig::default(), &PreprocessConfig::default()).unwrap();
        let base = ForestParams {
            n_estimators: 0,
            bootstrap: true,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 2,
        };
        let aucs = forest_prefix_aucs(&folds[0], &[0, 1], &base, &[5, 12], 9).unwrap();
        for (n, auc) in [5, 12].into_iter().zip(aucs) {
            let p = ForestParams { n_estimators: n, ..base };
            let f = train_forest(&folds[0].train.x, &folds[0].train_y, &p, 9).unwrap();
            let s = predict_proba_forest(&f, &folds[0].test.x).unwrap();
            assert_eq!(roc_auc(&s, &folds[0].test_y).unwrap().to_bits(), auc.to_bits());
        }
    }

    #[test]
    fn weak_regularization_wins_on_suppressor_signal() {
        // y depends on x1 - x2 where both share a large common factor; heavy
        // shrinkage pushes weights toward the marginal covariances (x1 only)
        let mut rng = substream(5, 0);
        let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..200 {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let e: f64 = rng.gen_range(-0.1..0.1);
            a.push(Some(z + e));
            b.push(Some(z));
            y.push(Some(rng.gen_bool(1.0 / (1.0 + (-60.0 * e).exp()))));
        }
        let t = DataTable::new(
            vec![
                ColumnSpec::numeric("a", Category::Environmental),
                ColumnSpec::numeric("b", Category::Environmental),
                ColumnSpec::binary("y", Category::Outcome),
            ],
            vec![ColumnData::Numeric(a), ColumnData::Numeric(b), ColumnData::Binary(y)],
        )
        .unwrap();
        let folds = prepare_folds(&t, "y", &CVConfig::default(), &PreprocessConfig::default()).unwrap();
        let cols = vec!["a".to_string(), "b".to_string()];
        let r = grid_search(&folds, &cols, &GridSpec::default().lr_cells(), 0).unwrap();
        assert!(r.cells[4].mean > r.cells[0].mean + 0.05, "{:?}", r.cells.iter().map(|c| c.mean).collect::<Vec<_>>());
        assert_eq!(r.best_params(), ModelSpec::Logistic { c: 100.0 });
    }
}
