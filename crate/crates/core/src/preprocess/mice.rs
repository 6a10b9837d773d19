//! Deterministic single imputation by chained equations.
//!
//! Each numeric column is regressed (OLS with intercept) on its `k` most
//! |r|-correlated peers. Neighbor sets come from the pairwise-complete
//! correlation of the fitting data and are frozen at fit time; the
//! regressions of the final sweep are what `apply_mice` uses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::correlation_matrix_of;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiceConfig {
    pub k: usize,
    pub max_sweeps: usize,
    /// Max absolute cell change, in units of the column's observed std.
    pub tol: f64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_sweeps: 10,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnImputer {
    /// `intercept + Σ coef·column[predictor]`
    Regression {
        predictors: Vec<usize>,
        intercept: f64,
        coefficients: Vec<f64>,
    },
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiceSpec {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
    pub imputers: Vec<ColumnImputer>,
    pub config: MiceConfig,
    pub sweeps: usize,
    pub diagnostics: Vec<String>,
}

fn observed_stats(col: &[Option<f64>]) -> Option<(f64, f64)> {
    let obs: Vec<f64> = col.iter().flatten().copied().collect();
    if obs.is_empty() {
        return None;
    }
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// OLS with intercept; `None` when the design is rank deficient.
fn ols(target: &[f64], predictors: &[&[f64]], rows: &[usize]) -> Option<(f64, Vec<f64>)> {
    let d = predictors.len() + 1;
    if rows.len() < d {
        return None;
    }
    let x = DMatrix::from_fn(rows.len(), d, |i, j| if j == 0 { 1.0 } else { predictors[j - 1][rows[i]] });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| target[r]));
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return None;
    }
    let beta = svd.solve(&y, 0.0).ok()?;
    Some((beta[0], beta.iter().skip(1).copied().collect()))
}

fn predict(imputer: &ColumnImputer, filled: &[Vec<f64>], row: usize, mean: f64) -> f64 {
    match imputer {
        ColumnImputer::Regression {
            predictors,
            intercept,
            coefficients,
        } => intercept + predictors.iter().zip(coefficients).map(|(&p, c)| c * filled[p][row]).sum::<f64>(),
        ColumnImputer::Mean => mean,
    }
}

/// Fits the chained regressions and returns the imputed fitting data.
pub fn fit_mice(names: &[String], columns: &[Vec<Option<f64>>], config: &MiceConfig) -> Result<(MiceSpec, Vec<Vec<f64>>)> {
    if names.len() != columns.len() {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            found: columns.len(),
        });
    }
    let p = columns.len();
    let n = columns.first().map_or(0, Vec::len);
    let mut means = Vec::with_capacity(p);
    let mut stds = Vec::with_capacity(p);
    for (name, col) in names.iter().zip(columns) {
        let (m, s) = observed_stats(col)
            .ok_or_else(|| Error::InsufficientData(format!("column `{name}` has no observed values")))?;
        means.push(m);
        stds.push(s);
    }

    let corr = correlation_matrix_of(names.to_vec(), columns);
    let neighbors: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut cands: Vec<(usize, f64)> = (0..p)
                .filter(|&i| i != j)
                .filter_map(|i| corr.get(j, i).map(|r| (i, r.abs())))
                .collect();
            cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cands.into_iter().take(config.k).map(|(i, _)| i).collect()
        })
        .collect();

    let mut filled: Vec<Vec<f64>> = columns
        .iter()
        .zip(&means)
        .map(|(col, &m)| col.iter().map(|v| v.unwrap_or(m)).collect())
        .collect();
    let observed_rows: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| (0..n).filter(|&r| col[r].is_some()).collect())
        .collect();

    let mut imputers = vec![ColumnImputer::Mean; p];
    let mut diagnostics = Vec::new();
    let mut sweeps = 0;
    for _ in 0..config.max_sweeps.max(1) {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let imputer = if neighbors[j].is_empty() {
                ColumnImputer::Mean
            } else {
                let preds: Vec<&[f64]> = neighbors[j].iter().map(|&i| filled[i].as_slice()).collect();
                match ols(&filled[j], &preds, &observed_rows[j]) {
                    Some((intercept, coefficients)) => ColumnImputer::Regression {
                        predictors: neighbors[j].clone(),
                        intercept,
                        coefficients,
                    },
                    None => ColumnImputer::Mean,
                }
            };
            let scale = if stds[j] > 0.0 { stds[j] } else { 1.0 };
            for r in 0..n {
                if columns[j][r].is_none() {
                    let v = predict(&imputer, &filled, r, means[j]);
                    max_change = max_change.max((v - filled[j][r]).abs() / scale);
                    filled[j][r] = v;
                }
            }
            imputers[j] = imputer;
        }
        if max_change < config.tol {
            break;
        }
    }
    for (j, imp) in imputers.iter().enumerate() {
        if matches!(imp, ColumnImputer::Mean) && observed_rows[j].len() < n {
            let msg = format!("`{}` imputed by its mean (no usable regression)", names[j]);
            log::debug!("{msg}");
            diagnostics.push(msg);
        }
    }
    Ok((
        MiceSpec {
            columns: names.to_vec(),
            means,
            stds,
            neighbors,
            imputers,
            config: *config,
            sweeps,
            diagnostics,
        },
        filled,
    ))
}

/// Imputes with the frozen regressions; observed cells are never changed.
pub fn apply_mice(spec: &MiceSpec, columns: &[Vec<Option<f64>>]) -> Result<Vec<Vec<f64>>> {
    if columns.len() != spec.columns.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.columns.len(),
            found: columns.len(),
        });
    }
    let n = columns.first().map_or(0, Vec::len);
    let mut filled: Vec<Vec<f64>> = columns
        .iter()
        .zip(&spec.means)
        .map(|(col, &m)| col.iter().map(|v| v.unwrap_or(m)).collect())
        .collect();
    if columns.iter().all(|c| c.iter().all(Option::is_some)) {
        return Ok(filled);
    }
    for _ in 0..spec.config.max_sweeps.max(1) {
        let mut max_change: f64 = 0.0;
        for (j, imputer) in spec.imputers.iter().enumerate() {
            let scale = if spec.stds[j] > 0.0 { spec.stds[j] } else { 1.0 };
            for r in 0..n {
                if columns[j][r].is_none() {
                    let v = predict(imputer, &filled, r, spec.means[j]);
                    max_change = max_change.max((v - filled[j][r]).abs() / scale);
                    filled[j][r] = v;
                }
            }
        }
        if max_change < spec.config.tol {
            break;
        }
    }
    Ok(filled)
}
