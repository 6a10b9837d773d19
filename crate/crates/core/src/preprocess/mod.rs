//! Fit-on-train, apply-anywhere preprocessing.
//!
//! Order: drop columns with too much missingness, mode-impute categorical and
//! binary columns, dummy-encode categoricals, MICE on numerics, standardize
//! numerics. Everything a [`PreprocessPlan`] holds comes from the fitting rows.

pub mod mice;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::table::{ColumnData, ColumnKind, DataTable};

pub use mice::{apply_mice, fit_mice, ColumnImputer, MiceConfig, MiceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub missing_threshold: f64,
    pub mice: MiceConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            missing_threshold: 0.30,
            mice: MiceConfig::default(),
        }
    }
}

/// Columns whose missing fraction strictly exceeds `threshold`.
pub fn drop_high_missing(train: &DataTable, columns: &[String], threshold: f64) -> Result<Vec<String>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("missing threshold {threshold} not in (0,1)")));
    }
    if train.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    let n = train.n_rows() as f64;
    let mut dropped = Vec::new();
    for name in columns {
        if train.column(name)?.missing_count() as f64 / n > threshold {
            dropped.push(name.clone());
        }
    }
    Ok(dropped)
}

/// Observed level counts, most frequent first, ties lexicographic.
fn ranked_levels(col: &ColumnData) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    match col {
        ColumnData::Categorical { levels, codes } => {
            for c in codes.iter().flatten() {
                *counts.entry(levels[*c as usize].to_string()).or_default() += 1;
            }
        }
        ColumnData::Binary(v) => {
            for b in v.iter().flatten() {
                *counts.entry(if *b { "1" } else { "0" }.to_string()).or_default() += 1;
            }
        }
        ColumnData::Numeric(_) => {}
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Modal level per categorical or binary column (binary levels are "0"/"1").
pub fn fit_modes(train: &DataTable, columns: &[String]) -> Result<BTreeMap<String, String>> {
    let mut modes = BTreeMap::new();
    for name in columns {
        let col = train.column(name)?;
        if col.kind() == ColumnKind::Numeric {
            return Err(Error::ColumnKind {
                column: name.clone(),
                expected: "categorical or binary",
                found: "numeric",
            });
        }
        let ranked = ranked_levels(col);
        let (mode, _) = ranked.first().ok_or_else(|| Error::InsufficientData(format!("`{name}` has no observed values")))?;
        modes.insert(name.clone(), mode.clone());
    }
    Ok(modes)
}

/// Fills missing categorical/binary cells with the fitted modes.
pub fn impute_categorical_mode(modes: &BTreeMap<String, String>, table: &DataTable) -> Result<DataTable> {
    let mut out = table.clone();
    for (name, mode) in modes {
        let idx = table.column_index(name)?;
        let filled = match table.column_at(idx) {
            ColumnData::Binary(v) => {
                let m = mode == "1";
                ColumnData::Binary(v.iter().map(|b| Some(b.unwrap_or(m))).collect())
            }
            ColumnData::Categorical { levels, codes } => {
                let mut levels = levels.clone();
                let code = match levels.iter().position(|l| &**l == mode.as_str()) {
                    Some(c) => c as u32,
                    None => {
                        levels.push(mode.as_str().into());
                        (levels.len() - 1) as u32
                    }
                };
                ColumnData::Categorical {
                    codes: codes.iter().map(|c| Some(c.unwrap_or(code))).collect(),
                    levels,
                }
            }
            ColumnData::Numeric(_) => {
                return Err(Error::ColumnKind {
                    column: name.clone(),
                    expected: "categorical or binary",
                    found: "numeric",
                })
            }
        };
        out.replace_column(idx, filled);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DummyEncoding {
    /// Levels that get a 0/1 column, lexicographic.
    pub kept: Vec<String>,
    pub dropped: String,
}

/// One dummy per non-modal observed level. Single-level columns are left out
/// of the map and reported in the returned diagnostics.
pub fn fit_dummy_encoding(
    train: &DataTable,
    columns: &[String],
) -> Result<(BTreeMap<String, DummyEncoding>, Vec<String>)> {
    let mut map = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for name in columns {
        let col = train.column(name)?;
        if col.kind() != ColumnKind::Categorical {
            return Err(Error::ColumnKind {
                column: name.clone(),
                expected: "categorical",
                found: col.kind().as_str(),
            });
        }
        let ranked = ranked_levels(col);
        if ranked.len() < 2 {
            diagnostics.push(format!("`{name}` has fewer than two observed levels and was dropped"));
            continue;
        }
        let dropped = ranked[0].0.clone();
        let mut kept: Vec<String> = ranked[1..].iter().map(|(l, _)| l.clone()).collect();
        kept.sort();
        map.insert(name.clone(), DummyEncoding { kept, dropped });
    }
    Ok((map, diagnostics))
}

pub fn dummy_column_name(column: &str, level: &str) -> String {
    format!("{column}_{level}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub mean: f64,
    /// Population std; 0 marks a constant column that is emitted as zeros.
    pub std: f64,
}

impl ScaleStats {
    pub fn apply(&self, v: f64) -> f64 {
        if self.std > 0.0 {
            (v - self.mean) / self.std
        } else {
            0.0
        }
    }
}

/// Mean and population std over the observed values of each column.
pub fn fit_standardizer(names: &[String], columns: &[Vec<Option<f64>>]) -> Result<BTreeMap<String, ScaleStats>> {
    let mut scaler = BTreeMap::new();
    for (name, col) in names.iter().zip(columns) {
        let obs: Vec<f64> = col.iter().flatten().copied().collect();
        if obs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "`{name}` needs at least two observed values to standardize"
            )));
        }
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        // relative guard so rounding noise on a constant column does not blow up
        let std = if std <= 1e-12 * mean.abs().max(1.0) { 0.0 } else { std };
        scaler.insert(name.clone(), ScaleStats { mean, std });
    }
    Ok(scaler)
}

pub fn apply_standardizer(stats: &ScaleStats, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| stats.apply(v)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputColumn {
    Numeric { source: String },
    Binary { source: String },
    Dummy { source: String, level: String },
}

impl OutputColumn {
    pub fn source(&self) -> &str {
        match self {
            OutputColumn::Numeric { source } | OutputColumn::Binary { source } | OutputColumn::Dummy { source, .. } => {
                source
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            OutputColumn::Numeric { source } | OutputColumn::Binary { source } => source.clone(),
            OutputColumn::Dummy { source, level } => dummy_column_name(source, level),
        }
    }
}

/// Everything learned from the fitting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub config: PreprocessConfig,
    /// Predictor columns seen at fit time, schema order.
    pub input_columns: Vec<String>,
    pub dropped_columns: Vec<String>,
    pub cat_modes: BTreeMap<String, String>,
    pub dummy_map: BTreeMap<String, DummyEncoding>,
    pub mice_spec: Option<MiceSpec>,
    pub scaler: BTreeMap<String, ScaleStats>,
    pub outputs: Vec<OutputColumn>,
    pub diagnostics: Vec<String>,
}

/// A complete numeric design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    /// Raw column each design column came from.
    pub sources: Vec<String>,
    pub x: Matrix,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.n_cols()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Keeps the named columns in the order given.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Design> {
        let idx = names.iter().map(|n| self.index_of(n.as_ref())).collect::<Result<Vec<_>>>()?;
        Ok(Design {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            sources: idx.iter().map(|&i| self.sources[i].clone()).collect(),
            x: self.x.select_columns(&idx),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Design {
        Design {
            names: self.names.clone(),
            sources: self.sources.clone(),
            x: self.x.select_rows(rows),
        }
    }
}

fn predictor_columns(table: &DataTable) -> Vec<String> {
    table
        .schema()
        .iter()
        .filter(|s| s.category.is_predictor())
        .map(|s| s.name.clone())
        .collect()
}

impl PreprocessPlan {
    /// Fits on `train` and returns the plan with the train design it produced.
    pub fn fit(train: &DataTable, config: &PreprocessConfig) -> Result<(PreprocessPlan, Design)> {
        let input_columns = predictor_columns(train);
        if input_columns.is_empty() {
            return Err(Error::InsufficientData("no predictor columns".into()));
        }
        let mut diagnostics = Vec::new();
        let mut dropped_columns = drop_high_missing(train, &input_columns, config.missing_threshold)?;
        for d in &dropped_columns {
            diagnostics.push(format!("`{d}` dropped: more than {:.0}% missing", config.missing_threshold * 100.0));
        }
        let kept: Vec<&String> = input_columns.iter().filter(|c| !dropped_columns.contains(c)).collect();
        let of_kind = |k: ColumnKind| -> Vec<String> {
            kept.iter()
                .filter(|c| train.spec(c).map(|s| s.kind == k).unwrap_or(false))
                .map(|c| (*c).clone())
                .collect()
        };
        let numerics = of_kind(ColumnKind::Numeric);
        let binaries = of_kind(ColumnKind::Binary);
        let categoricals = of_kind(ColumnKind::Categorical);

        let mode_cols: Vec<String> = kept
            .iter()
            .filter(|c| !numerics.contains(c))
            .map(|c| (*c).clone())
            .collect();
        let cat_modes = fit_modes(train, &mode_cols)?;
        let (dummy_map, dummy_diag) = fit_dummy_encoding(train, &categoricals)?;
        for c in &categoricals {
            if !dummy_map.contains_key(c) {
                dropped_columns.push(c.clone());
            }
        }
        diagnostics.extend(dummy_diag);

        let raw: Vec<Vec<Option<f64>>> = numerics.iter().map(|c| train.as_f64(c)).collect::<Result<_>>()?;
        let (mice_spec, imputed) = if numerics.is_empty() {
            (None, Vec::new())
        } else if raw.iter().all(|c| c.iter().all(Option::is_some)) {
            (None, raw.iter().map(|c| c.iter().map(|v| v.unwrap_or(0.0)).collect()).collect())
        } else {
            let (spec, imputed) = fit_mice(&numerics, &raw, &config.mice)?;
            diagnostics.extend(spec.diagnostics.iter().cloned());
            (Some(spec), imputed)
        };
        let imputed_opt: Vec<Vec<Option<f64>>> =
            imputed.iter().map(|c| c.iter().copied().map(Some).collect()).collect();
        let scaler = fit_standardizer(&numerics, &imputed_opt)?;
        for (name, s) in &scaler {
            if s.std == 0.0 {
                diagnostics.push(format!("`{name}` is constant on the fitting rows and is emitted as zeros"));
            }
        }

        let mut outputs = Vec::new();
        for c in &input_columns {
            if dropped_columns.contains(c) {
                continue;
            }
            if numerics.contains(c) {
                outputs.push(OutputColumn::Numeric { source: c.clone() });
            } else if binaries.contains(c) {
                outputs.push(OutputColumn::Binary { source: c.clone() });
            } else if let Some(enc) = dummy_map.get(c) {
                for level in &enc.kept {
                    outputs.push(OutputColumn::Dummy {
                        source: c.clone(),
                        level: level.clone(),
                    });
                }
            }
        }
        for d in &diagnostics {
            log::debug!("preprocess: {d}");
        }
        let plan = PreprocessPlan {
            config: *config,
            input_columns,
            dropped_columns,
            cat_modes,
            dummy_map,
            mice_spec,
            scaler,
            outputs,
            diagnostics,
        };
        let numeric_values: BTreeMap<&str, &Vec<f64>> =
            numerics.iter().map(String::as_str).zip(imputed.iter()).collect();
        let design = plan.assemble(train, &numeric_values)?;
        Ok((plan, design))
    }

    fn numeric_columns(&self) -> Vec<String> {
        self.outputs
            .iter()
            .filter_map(|o| match o {
                OutputColumn::Numeric { source } => Some(source.clone()),
                _ => None,
            })
            .collect()
    }

    /// Applies the frozen plan to any table carrying the fit-time columns.
    pub fn transform(&self, table: &DataTable) -> Result<Design> {
        let numerics = self.numeric_columns();
        let raw: Vec<Vec<Option<f64>>> = numerics.iter().map(|c| table.as_f64(c)).collect::<Result<_>>()?;
        let imputed = match &self.mice_spec {
            Some(spec) => apply_mice(spec, &raw)?,
            None => {
                // numerics were complete at fit time; fall back to the centering mean
                raw.iter()
                    .zip(&numerics)
                    .map(|(c, name)| {
                        let m = self.scaler[name].mean;
                        c.iter().map(|v| v.unwrap_or(m)).collect()
                    })
                    .collect()
            }
        };
        let numeric_values: BTreeMap<&str, &Vec<f64>> =
            numerics.iter().map(String::as_str).zip(imputed.iter()).collect();
        self.assemble(table, &numeric_values)
    }

    fn assemble(&self, table: &DataTable, numeric_values: &BTreeMap<&str, &Vec<f64>>) -> Result<Design> {
        let n = table.n_rows();
        let mode_cols: Vec<&String> = self.cat_modes.keys().collect();
        let filled = impute_categorical_mode(&self.cat_modes, &table.select_columns(&mode_cols)?)?;
        let mut columns = Vec::with_capacity(self.outputs.len());
        for out in &self.outputs {
            let col = match out {
                OutputColumn::Numeric { source } => {
                    let vals = numeric_values
                        .get(source.as_str())
                        .ok_or_else(|| Error::MissingColumn(source.clone()))?;
                    apply_standardizer(&self.scaler[source], vals)
                }
                OutputColumn::Binary { source } => match filled.column(source)? {
                    ColumnData::Binary(v) => v.iter().map(|b| if b.unwrap_or(false) { 1.0 } else { 0.0 }).collect(),
                    other => {
                        return Err(Error::ColumnKind {
                            column: source.clone(),
                            expected: "binary",
                            found: other.kind().as_str(),
                        })
                    }
                },
                OutputColumn::Dummy { source, level } => match filled.column(source)? {
                    ColumnData::Categorical { levels, codes } => codes
                        .iter()
                        .map(|c| match c {
                            Some(c) if &*levels[*c as usize] == level.as_str() => 1.0,
                            _ => 0.0,
                        })
                        .collect(),
                    other => {
                        return Err(Error::ColumnKind {
                            column: source.clone(),
                            expected: "categorical",
                            found: other.kind().as_str(),
                        })
                    }
                },
            };
            columns.push(col);
        }
        Ok(Design {
            names: self.outputs.iter().map(OutputColumn::name).collect(),
            sources: self.outputs.iter().map(|o| o.source().to_string()).collect(),
            x: Matrix::from_columns(n, &columns)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Category, ColumnSpec};
    use std::sync::Arc;

    fn cat(levels: &[&str], codes: &[Option<u32>]) -> ColumnData {
        ColumnData::Categorical {
            levels: levels.iter().map(|l| Arc::<str>::from(*l)).collect(),
            codes: codes.to_vec(),
        }
    }

    fn table(cols: Vec<(ColumnSpec, ColumnData)>) -> DataTable {
        let (s, c) = cols.into_iter().unzip();
        DataTable::new(s, c).unwrap()
    }

    fn num(name: &str, v: &[Option<f64>]) -> (ColumnSpec, ColumnData) {
        (ColumnSpec::numeric(name, Category::Environmental), ColumnData::Numeric(v.to_vec()))
    }

    #[test]
    fn strict_missing_threshold() {
        let mut a = vec![Some(1.0); 100];
        let mut b = vec![Some(1.0); 100];
        for i in 0..30 {
            a[i] = None;
        }
        for i in 0..31 {
            b[i] = None;
        }
        let t = table(vec![num("a", &a), num("b", &b), num("c", &[Some(0.0); 100])]);
        let cols: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        assert_eq!(drop_high_missing(&t, &cols, 0.3).unwrap(), vec!["b".to_string()]);
        assert!(drop_high_missing(&t, &cols, 1.0).is_err());
    }

    #[test]
    fn mode_imputation_and_ties() {
        let t = table(vec![(
            ColumnSpec::categorical("g", Category::Demographic),
            cat(&["b", "a"], &[Some(1), Some(1), Some(0), None]),
        )]);
        let modes = fit_modes(&t, &["g".to_string()]).unwrap();
        assert_eq!(modes["g"], "a");
        let out = impute_categorical_mode(&modes, &t).unwrap();
        assert_eq!(out.cell(3, 0), crate::table::Cell::Level("a"));

        let tie = table(vec![(
            ColumnSpec::categorical("g", Category::Demographic),
            cat(&["b", "a"], &[Some(0), Some(1)]),
        )]);
        assert_eq!(fit_modes(&tie, &["g".to_string()]).unwrap()["g"], "a");
        // already complete: identity
        let modes = fit_modes(&tie, &["g".to_string()]).unwrap();
        assert_eq!(impute_categorical_mode(&modes, &tie).unwrap(), tie);

        let empty = table(vec![(
            ColumnSpec::categorical("g", Category::Demographic),
            cat(&["a"], &[None, None]),
        )]);
        assert!(matches!(fit_modes(&empty, &["g".to_string()]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn dummy_encoding_drops_modal_level() {
        let seasons = ["Autumn", "Spring", "Summer", "Winter"];
        let codes: Vec<Option<u32>> = [2, 2, 2, 0, 1, 3, 2, 0].iter().map(|&c| Some(c)).collect();
        let t = table(vec![(ColumnSpec::categorical("season", Category::Environmental), cat(&seasons, &codes))]);
        let (map, diag) = fit_dummy_encoding(&t, &["season".to_string()]).unwrap();
        assert!(diag.is_empty());
        assert_eq!(map["season"].dropped, "Summer");
        assert_eq!(map["season"].kept, vec!["Autumn", "Spring", "Winter"]);

        let single = table(vec![(ColumnSpec::categorical("s", Category::Demographic), cat(&["x"], &[Some(0); 3]))]);
        let (map, diag) = fit_dummy_encoding(&single, &["s".to_string()]).unwrap();
        assert!(map.is_empty());
        assert_eq!(diag.len(), 1);
    }

    #[test]
    fn standardizer_uses_population_std() {
        let s = fit_standardizer(&["x".to_string()], &[vec![Some(1.0), Some(2.0), Some(3.0)]]).unwrap();
        let st = s["x"];
        assert_eq!(st.mean, 2.0);
        assert!((st.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(st.apply(2.0), 0.0);
        assert!((st.apply(4.0) - 2.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let c = fit_standardizer(&["c".to_string()], &[vec![Some(5.0); 4]]).unwrap();
        assert_eq!(apply_standardizer(&c["c"], &[5.0, 7.0]), vec![0.0, 0.0]);
    }

    fn mixed_table() -> DataTable {
        let n = 12;
        let x: Vec<Option<f64>> = (0..n).map(|i| if i == 3 { None } else { Some(i as f64) }).collect();
        let y: Vec<Option<f64>> = (0..n).map(|i| if i == 5 { None } else { Some(2.0 * i as f64 + 1.0) }).collect();
        let mostly_missing: Vec<Option<f64>> = (0..n).map(|i| if i < 5 { None } else { Some(1.0) }).collect();
        let flag: Vec<Option<bool>> = (0..n).map(|i| if i == 0 { None } else { Some(i % 3 == 0) }).collect();
        let g: Vec<Option<u32>> = (0..n).map(|i| Some((i % 3 == 0) as u32 + (i % 4 == 0) as u32)).collect();
        table(vec![
            (ColumnSpec::categorical("id", Category::Meta), cat(&["p"], &vec![Some(0); n])),
            num("x", &x),
            num("y", &y),
            num("sparse", &mostly_missing),
            (ColumnSpec::binary("flag", Category::ClinicalOnset), ColumnData::Binary(flag)),
            (ColumnSpec::categorical("g", Category::Demographic), cat(&["a", "b", "c"], &g)),
            (ColumnSpec::binary("relapse", Category::Outcome), ColumnData::Binary(vec![Some(true); n])),
        ])
    }

    #[test]
    fn full_plan_produces_complete_centered_design() {
        let t = mixed_table();
        let (plan, design) = PreprocessPlan::fit(&t, &PreprocessConfig::default()).unwrap();
        assert_eq!(plan.dropped_columns, vec!["sparse".to_string()]);
        assert_eq!(design.names, vec!["x", "y", "flag", "g_b", "g_c"]);
        assert_eq!(design.sources, vec!["x", "y", "flag", "g", "g"]);
        for j in 0..2 {
            let mean = design.x.column(j).iter().sum::<f64>() / design.n_rows() as f64;
            assert!(mean.abs() < 1e-9);
        }
        // train transform through the frozen plan reproduces the fit-time design
        let again = plan.transform(&t).unwrap();
        for (a, b) in again.x.column(1).iter().zip(design.x.column(1)) {
            assert!((a - b).abs() < 1e-9);
        }
        // imputed y follows the exact linear relation
        let st = plan.scaler["y"];
        let y5 = design.x.get(5, 1) * st.std + st.mean;
        assert!((y5 - 11.0).abs() < 0.05, "{y5}");
        let json = plan.to_json().unwrap();
        let back: PreprocessPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn unseen_level_maps_to_zeros() {
        let t = mixed_table();
        let (plan, _) = PreprocessPlan::fit(&t, &PreprocessConfig::default()).unwrap();
        let row = t.select_rows(&[1]);
        let test = table(
            row.schema()
                .iter()
                .cloned()
                .zip(row.columns().map(|(s, c)| {
                    if s.name == "g" {
                        cat(&["zzz"], &[Some(0)])
                    } else {
                        c.clone()
                    }
                }))
                .collect(),
        );
        let d = plan.transform(&test).unwrap();
        assert_eq!(d.x.get(0, 3), 0.0);
        assert_eq!(d.x.get(0, 4), 0.0);
    }
}
