//! The full protocol: split, per-fold grid search for each (model, feature
//! setting) cell, refit on the training set, one evaluation on the test set.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::cohort::OUTCOME;
use crate::cv::{fit_on, grid_search, predict_on, prepare_folds, CVConfig, CellScore, GridResult, GridSpec, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, BootstrapConfig, EvalReport};
use crate::models::TrainedModel;
use crate::preprocess::{Design, PreprocessConfig, PreprocessPlan};
use crate::rng::derive_seed;
use crate::selection::{backward_select, correlation_prune, vip_select, CurvePoint, Setting};
use crate::split::stratified_split;
use crate::table::DataTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub model: ModelKind,
    pub setting: Setting,
}

impl CellId {
    pub const fn new(model: ModelKind, setting: Setting) -> Self {
        Self { model, setting }
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.model.as_str(), self.setting.as_str())
    }
}

/// The seven cells in report order.
pub fn default_cells() -> Vec<CellId> {
    use ModelKind::*;
    use Setting::*;
    vec![
        CellId::new(Rf, All),
        CellId::new(Rf, CorrPrune),
        CellId::new(Rf, Vip),
        CellId::new(Lr, All),
        CellId::new(Lr, CorrPrune),
        CellId::new(Lr, Vip),
        CellId::new(Lr, Bfs),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub outcome: String,
    pub test_fraction: f64,
    pub seed: u64,
    pub cv_k: usize,
    pub cv_stratified: bool,
    pub grid: GridSpec,
    pub preprocess: PreprocessConfig,
    pub corr_threshold: f64,
    /// Columns visited first by correlation pruning, in priority order.
    pub corr_overrides: Vec<String>,
    pub bootstrap_n: usize,
    pub alpha: f64,
    pub cells: Vec<CellId>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            outcome: OUTCOME.to_string(),
            test_fraction: 0.30,
            seed: 0,
            cv_k: 4,
            cv_stratified: true,
            grid: GridSpec::default(),
            preprocess: PreprocessConfig::default(),
            corr_threshold: 0.3,
            corr_overrides: Vec::new(),
            bootstrap_n: 5000,
            alpha: 0.05,
            cells: default_cells(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} not in (0,1)", self.test_fraction)));
        }
        if self.cv_k < 2 {
            return Err(Error::Config("cv_k must be at least 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if self.bootstrap_n == 0 {
            return Err(Error::Config("bootstrap_n must be positive".into()));
        }
        if !(self.corr_threshold >= 0.0 && self.corr_threshold <= 1.0) {
            return Err(Error::Config(format!("corr_threshold {} not in [0,1]", self.corr_threshold)));
        }
        if self.cells.is_empty() {
            return Err(Error::Config("no cells requested".into()));
        }
        if self.cells.contains(&CellId::new(ModelKind::Rf, Setting::Bfs)) {
            return Err(Error::Config("backward selection runs for LR only".into()));
        }
        self.grid.validate()
    }

    pub fn cv(&self) -> CVConfig {
        CVConfig {
            k: self.cv_k,
            stratified: self.cv_stratified,
            seed: derive_seed(self.seed, "cv"),
        }
    }

    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            n_resamples: self.bootstrap_n,
            alpha: self.alpha,
            seed: derive_seed(self.seed, "bootstrap"),
        }
    }

    fn forest_seed(&self) -> u64 {
        derive_seed(self.seed, "forest")
    }
}

/// Test rows behind an access counter; every read is one evaluation.
#[derive(Debug)]
pub struct HeldOut {
    table: DataTable,
    reads: AtomicUsize,
}

impl HeldOut {
    pub fn new(table: DataTable) -> Self {
        Self {
            table,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn read(&self) -> &DataTable {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.table
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: CellId,
    pub selected_features: Vec<String>,
    pub best_params: ModelSpec,
    pub cv_mean_auc: f64,
    pub cv_std_auc: f64,
    pub grid: Vec<CellScore>,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: CellId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_train: usize,
    pub n_test: usize,
    pub train_positive: usize,
    pub features: Vec<String>,
    pub cells: Vec<CellReport>,
    pub failures: Vec<CellFailure>,
    pub corr_selected: Option<Vec<String>>,
    /// RF importances on the full design, in design order.
    pub importances: Option<Vec<(String, f64)>>,
    pub bfs_curve: Option<Vec<CurvePoint>>,
    pub preprocess_diagnostics: Vec<String>,
}

impl ExperimentReport {
    pub fn cell(&self, id: CellId) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.cell == id)
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Splits `cohort` and runs every configured cell.
pub fn run_experiment(cohort: &DataTable, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (train, test) = stratified_split(cohort, &config.outcome, config.test_fraction, derive_seed(config.seed, "split"))?;
    let held = HeldOut::new(test);
    run_on_split(&train, &held, config)
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    train_y: Vec<bool>,
    plan: PreprocessPlan,
    design: Design,
    folds: Vec<crate::cv::FoldData>,
    grids: HashMap<CellId, GridResult>,
}

impl Context<'_> {
    fn grid(&mut self, id: CellId, features: &[String]) -> Result<GridResult> {
        if let Some(g) = self.grids.get(&id) {
            return Ok(g.clone());
        }
        let cells = self.config.grid.cells(id.model);
        let g = grid_search(&self.folds, features, &cells, self.config.forest_seed())?;
        self.grids.insert(id, g.clone());
        Ok(g)
    }
}

/// Runs the cells on a fixed split. The test table is read once per evaluated cell.
pub fn run_on_split(train: &DataTable, test: &HeldOut, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let train_y = train.labels(&config.outcome)?;
    let (plan, design) = PreprocessPlan::fit(train, &config.preprocess)?;
    let folds = prepare_folds(train, &config.outcome, &config.cv(), &config.preprocess)?;
    let all: Vec<String> = design.names.clone();
    let mut ctx = Context {
        config,
        train_y,
        plan,
        design,
        folds,
        grids: HashMap::new(),
    };

    let wants = |s: Setting| config.cells.iter().any(|c| c.setting == s);
    let mut setup_failures: HashMap<Setting, String> = HashMap::new();
    let mut feature_sets: HashMap<Setting, Vec<String>> = HashMap::new();
    feature_sets.insert(Setting::All, all.clone());

    let mut corr_selected = None;
    if wants(Setting::CorrPrune) {
        match correlation_prune(train, config.corr_threshold, &config.corr_overrides) {
            Ok(sel) => {
                let cols: Vec<String> = ctx
                    .design
                    .names
                    .iter()
                    .zip(&ctx.design.sources)
                    .filter(|(_, src)| sel.selected.contains(src))
                    .map(|(n, _)| n.clone())
                    .collect();
                corr_selected = Some(sel.selected);
                feature_sets.insert(Setting::CorrPrune, cols);
            }
            Err(e) => {
                setup_failures.insert(Setting::CorrPrune, e.to_string());
            }
        }
    }

    let mut importances = None;
    if wants(Setting::Vip) {
        let vip = (|| -> Result<(Vec<f64>, Vec<String>)> {
            let g = ctx.grid(CellId::new(ModelKind::Rf, Setting::All), &all)?;
            let model = fit_on(&ctx.design, &ctx.train_y, &all, &g.best_params(), config.forest_seed())?;
            let TrainedModel::Forest(forest) = model else {
                unreachable!("RF grid yields forests")
            };
            let sel = vip_select(&forest.importances, &all)?;
            Ok((forest.importances, sel.selected))
        })();
        match vip {
            Ok((imp, selected)) => {
                importances = Some(all.iter().cloned().zip(imp).collect());
                if selected.is_empty() {
                    setup_failures.insert(Setting::Vip, "no feature above the mean importance".into());
                } else {
                    feature_sets.insert(Setting::Vip, selected);
                }
            }
            Err(e) => {
                setup_failures.insert(Setting::Vip, e.to_string());
            }
        }
    }

    let mut bfs_curve = None;
    if wants(Setting::Bfs) {
        match backward_select(&ctx.folds, &all, &config.grid.lr_c) {
            Ok(sel) => {
                bfs_curve = sel.curve;
                feature_sets.insert(Setting::Bfs, sel.selected);
            }
            Err(e) => {
                setup_failures.insert(Setting::Bfs, e.to_string());
            }
        }
    }

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &id in &config.cells {
        if let Some(msg) = setup_failures.get(&id.setting) {
            failures.push(CellFailure {
                cell: id,
                error: format!("feature selection failed: {msg}"),
            });
            continue;
        }
        let features = feature_sets[&id.setting].clone();
        match run_cell(&mut ctx, id, &features, test) {
            Ok(r) => cells.push(r),
            Err(e) => {
                log::error!("cell {} failed: {e}", id.label());
                failures.push(CellFailure {
                    cell: id,
                    error: e.to_string(),
                });
            }
        }
    }

    Ok(ExperimentReport {
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        train_positive: ctx.train_y.iter().filter(|&&v| v).count(),
        features: all,
        cells,
        failures,
        corr_selected,
        importances,
        bfs_curve,
        preprocess_diagnostics: ctx.plan.diagnostics.clone(),
    })
}

fn run_cell(ctx: &mut Context<'_>, id: CellId, features: &[String], test: &HeldOut) -> Result<CellReport> {
    let g = ctx.grid(id, features)?;
    let best = g.best_params();
    let model = fit_on(&ctx.design, &ctx.train_y, features, &best, ctx.config.forest_seed())?;
    let table = test.read();
    let test_design = ctx.plan.transform(table)?;
    let scores = predict_on(&model, &test_design, features)?;
    let labels = table.labels(&ctx.config.outcome)?;
    let eval = evaluate(&scores, &labels, &ctx.config.bootstrap())?;
    log::info!(
        "{}: cv {:.3} test auc {:.3} [{:.3}, {:.3}]",
        id.label(),
        g.best_score().mean,
        eval.auc_roc,
        eval.auc_roc_ci.0,
        eval.auc_roc_ci.1
    );
    Ok(CellReport {
        cell: id,
        selected_features: features.to_vec(),
        best_params: best,
        cv_mean_auc: g.best_score().mean,
        cv_std_auc: g.best_score().std,
        grid: g.cells,
        test: eval,
    })
}

/// A small grid for quick runs: one forest size, two leaf sizes.
pub fn reduced_grid() -> GridSpec {
    GridSpec {
        rf_bootstrap: vec![true],
        rf_min_samples_leaf: vec![4, 18],
        rf_n_estimators: vec![150],
        ..GridSpec::default()
    }
}
