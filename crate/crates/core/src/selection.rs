//! Correlation pruning, importance thresholding and backward elimination.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{lr_fold_auc, mean_std, FoldData};
use crate::error::{Error, Result};
use crate::stats::correlation_matrix_of;
use crate::table::{ColumnKind, DataTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    All,
    CorrPrune,
    Vip,
    Bfs,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::All => "all",
            Setting::CorrPrune => "corr_prune",
            Setting::Vip => "vip",
            Setting::Bfs => "bfs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// Feature removed to reach this size from the one above.
    pub removed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Setting,
    pub selected: Vec<String>,
    pub scores: Option<BTreeMap<String, f64>>,
    pub curve: Option<Vec<CurvePoint>>,
}

/// Greedy correlation pruning over the numeric and binary predictors of `train`.
///
/// Columns are visited by override priority, then ascending missing fraction,
/// then name; a column is kept iff |r| ≤ `threshold` against every kept one.
/// Categorical predictors pass through untouched.
pub fn correlation_prune(train: &DataTable, threshold: f64, overrides: &[String]) -> Result<SelectionResult> {
    if train.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    for o in overrides {
        let spec = train
            .spec(o)
            .map_err(|_| Error::UnknownColumn(format!("correlation override `{o}`")))?;
        if !spec.category.is_predictor() {
            return Err(Error::InvalidArgument(format!("override `{o}` is not a predictor")));
        }
    }
    let predictors: Vec<_> = train.schema().iter().filter(|s| s.category.is_predictor()).collect();
    let mut candidates: Vec<(usize, usize, String)> = predictors
        .iter()
        .filter(|s| s.kind != ColumnKind::Categorical)
        .map(|s| {
            let prio = overrides.iter().position(|o| o == &s.name).unwrap_or(usize::MAX);
            let missing = train.column(&s.name).map_or(0, |c| c.missing_count());
            (prio, missing, s.name.clone())
        })
        .collect();
    candidates.sort();
    let names: Vec<String> = candidates.iter().map(|c| c.2.clone()).collect();
    let data: Vec<Vec<Option<f64>>> = names.iter().map(|n| train.as_f64(n)).collect::<Result<_>>()?;
    let corr = correlation_matrix_of(names.clone(), &data);

    let mut kept: Vec<usize> = Vec::new();
    for i in 0..names.len() {
        let ok = kept
            .iter()
            .all(|&j| corr.get(i, j).map_or(true, |r| r.abs() <= threshold));
        if ok {
            kept.push(i);
        }
    }
    let kept_names: Vec<&String> = kept.iter().map(|&i| &names[i]).collect();
    // report in schema order
    let selected = predictors
        .iter()
        .filter(|s| s.kind == ColumnKind::Categorical || kept_names.contains(&&s.name))
        .map(|s| s.name.clone())
        .collect();
    Ok(SelectionResult {
        method: Setting::CorrPrune,
        selected,
        scores: None,
        curve: None,
    })
}

/// Keeps features whose importance is strictly above the mean, most important first.
pub fn vip_select(importances: &[f64], names: &[String]) -> Result<SelectionResult> {
    if importances.len() != names.len() {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            found: importances.len(),
        });
    }
    if importances.is_empty() {
        return Err(Error::InvalidArgument("no importances".into()));
    }
    let sum: f64 = importances.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || importances.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!("importances must be non-negative and sum to 1, got {sum}")));
    }
    let mean = sum / importances.len() as f64;
    let mut chosen: Vec<(f64, &String)> = importances
        .iter()
        .zip(names)
        .filter(|(v, _)| **v > mean)
        .map(|(v, n)| (*v, n))
        .collect();
    chosen.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(SelectionResult {
        method: Setting::Vip,
        selected: chosen.into_iter().map(|(_, n)| n.clone()).collect(),
        scores: Some(names.iter().cloned().zip(importances.iter().copied()).collect()),
        curve: None,
    })
}

/// CV score of an LR pipeline on `columns`: the best mean fold AUC over the C grid.
pub fn lr_subset_score(folds: &[FoldData], columns: &[String], lr_grid: &[f64]) -> Result<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for &c in lr_grid {
        let aucs = folds
            .iter()
            .map(|f| {
                let cols: Vec<usize> = columns.iter().filter_map(|n| f.train.index_of(n).ok()).collect();
                lr_fold_auc(f, &cols, c)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, std) = mean_std(&aucs);
        if best.map_or(true, |b| mean > b.0) {
            best = Some((mean, std, c));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty C grid".into()))
}

/// Backward elimination on design columns driven by CV AUC-ROC of LR.
///
/// Each step drops the feature whose removal gives the best score (C is
/// re-tuned per candidate); ties drop the lexicographically last name. The
/// returned subset is the size with the best score, ties to the smaller one.
pub fn backward_select(folds: &[FoldData], features: &[String], lr_grid: &[f64]) -> Result<SelectionResult> {
    if features.len() < 2 {
        return Err(Error::InsufficientData("backward selection needs at least two features".into()));
    }
    let mut current: Vec<String> = features.to_vec();
    let (mean, std, _) = lr_subset_score(folds, &current, lr_grid)?;
    let mut curve = vec![CurvePoint {
        size: current.len(),
        mean_auc: mean,
        std_auc: std,
        removed: None,
    }];
    let mut removal_order = Vec::new();
    while current.len() > 1 {
        let scores: Vec<(f64, f64)> = (0..current.len())
            .into_par_iter()
            .map(|i| {
                let subset: Vec<String> = current
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, n)| n.clone())
                    .collect();
                lr_subset_score(folds, &subset, lr_grid).map(|(m, s, _)| (m, s))
            })
            .collect::<Result<_>>()?;
        let mut pick = 0;
        for i in 1..current.len() {
            let better = scores[i].0 > scores[pick].0;
            let tie_later = scores[i].0 == scores[pick].0 && current[i] > current[pick];
            if better || tie_later {
                pick = i;
            }
        }
        let removed = current.remove(pick);
        log::debug!("bfs: drop {removed} -> {} features, auc {:.4}", current.len(), scores[pick].0);
        curve.push(CurvePoint {
            size: current.len(),
            mean_auc: scores[pick].0,
            std_auc: scores[pick].1,
            removed: Some(removed.clone()),
        });
        removal_order.push(removed);
    }
    let mut best = 0;
    for (i, pt) in curve.iter().enumerate() {
        // later entries are smaller subsets, so >= prefers them on ties
        if pt.mean_auc >= curve[best].mean_auc {
            best = i;
        }
    }
    let dropped = &removal_order[..best];
    let selected = features.iter().filter(|f| !dropped.contains(f)).cloned().collect();
    Ok(SelectionResult {
        method: Setting::Bfs,
        selected,
        scores: None,
        curve: Some(curve),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cv::{prepare_folds, CVConfig};
    use crate::preprocess::PreprocessConfig;
    use crate::rng::substream;
    use crate::table::{Category, ColumnData, ColumnSpec};
    use rand::Rng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vip_basic_cases() {
        let n = names(&["a", "b", "c", "d"]);
        assert!(vip_select(&[0.25; 4], &n).unwrap().selected.is_empty());
        assert_eq!(vip_select(&[0.0, 1.0, 0.0, 0.0], &n).unwrap().selected, vec!["b"]);
        assert_eq!(vip_select(&[0.1, 0.4, 0.3, 0.2], &n).unwrap().selected, vec!["b", "c"]);
        assert!(vip_select(&[0.1, 0.1], &names(&["a", "b"])).is_err());
    }

    fn table(cols: Vec<(&str, Vec<Option<f64>>)>) -> DataTable {
        let (s, c) = cols
            .into_iter()
            .map(|(n, v)| (ColumnSpec::numeric(n, Category::Environmental), ColumnData::Numeric(v)))
            .unzip();
        DataTable::new(s, c).unwrap()
    }

    #[test]
    fn prune_duplicates_and_identity() {
        let x: Vec<Option<f64>> = (0..20).map(|i| Some(i as f64)).collect();
        let mut x_missing = x.clone();
        x_missing[0] = None;
        let t = table(vec![("b", x.clone()), ("a", x_missing)]);
        // `b` has less missingness so it is visited first
        assert_eq!(correlation_prune(&t, 0.3, &[]).unwrap().selected, vec!["b"]);
        // an override flips the order
        assert_eq!(correlation_prune(&t, 0.3, &names(&["a"])).unwrap().selected, vec!["a"]);
        assert!(correlation_prune(&t, 0.3, &names(&["zzz"])).is_err());

        let mut rng = substream(1, 0);
        let cols: Vec<(&str, Vec<Option<f64>>)> = ["p", "q", "r"]
            .into_iter()
            .map(|n| (n, (0..2000).map(|_| Some(rng.gen_range(-1.0..1.0))).collect()))
            .collect();
        let t = table(cols);
        assert_eq!(correlation_prune(&t, 0.3, &[]).unwrap().selected, vec!["p", "q", "r"]);
    }

    fn bfs_data(seed: u64) -> DataTable {
        let mut rng = substream(seed, 0);
        let mut cols = vec![Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..160 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let y = rng.gen_bool(1.0 / (1.0 + (-4.0 * a).exp()));
            cols[0].push(Some(a));
            cols[1].push(Some(rng.gen_range(-1.0..1.0)));
            cols[2].push(Some(if y { 1.0 } else { 0.0 }));
        }
        let mut specs = vec![
            ColumnSpec::numeric("signal", Category::Environmental),
            ColumnSpec::numeric("noise", Category::Environmental),
        ];
        specs.push(ColumnSpec::binary("y", Category::Outcome));
        let y = cols.pop().unwrap().into_iter().map(|v| v.map(|v| v > 0.5)).collect();
        let mut data: Vec<ColumnData> = cols.into_iter().map(ColumnData::Numeric).collect();
        data.push(ColumnData::Binary(y));
        DataTable::new(specs, data).unwrap()
    }

    #[test]
    fn bfs_two_features_curve() {
        let t = bfs_data(2);
        let folds = prepare_folds(&t, "y", &CVConfig::default(), &PreprocessConfig::default()).unwrap();
        let r = backward_select(&folds, &names(&["signal", "noise"]), &[0.1, 1.0]).unwrap();
        let curve = r.curve.unwrap();
        assert_eq!(curve.iter().map(|p| p.size).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(curve[1].removed.as_deref(), Some("noise"));
        assert!(r.selected.contains(&"signal".to_string()));
        assert!(backward_select(&folds, &names(&["signal"]), &[1.0]).is_err());
    }
}
