//! Pairwise-complete Pearson correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::DataTable;

/// Sample Pearson coefficient over the rows where both values are observed.
pub fn pearson_correlation(x: &[Option<f64>], y: &[Option<f64>]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} complete pairs, need at least 2",
            pairs.len()
        )));
    }
    if is_constant(pairs.iter().map(|p| p.0)) {
        return Err(Error::ZeroVariance("x".into()));
    }
    if is_constant(pairs.iter().map(|p| p.1)) {
        return Err(Error::ZeroVariance("y".into()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn is_constant(mut values: impl Iterator<Item = f64>) -> bool {
    match values.next() {
        None => true,
        Some(first) => values.all(|v| v == first),
    }
}

/// Symmetric correlation matrix; `None` marks an undefined entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

pub fn correlation_matrix<S: AsRef<str>>(table: &DataTable, columns: &[S]) -> Result<CorrelationMatrix> {
    let data: Vec<Vec<Option<f64>>> = columns.iter().map(|c| table.as_f64(c.as_ref())).collect::<Result<_>>()?;
    Ok(correlation_matrix_of(
        columns.iter().map(|c| c.as_ref().to_string()).collect(),
        &data,
    ))
}

pub(crate) fn correlation_matrix_of(names: Vec<String>, data: &[Vec<Option<f64>>]) -> CorrelationMatrix {
    let p = data.len();
    let mut values = vec![vec![None; p]; p];
    for i in 0..p {
        values[i][i] = Some(1.0);
        for j in (i + 1)..p {
            let r = pearson_correlation(&data[i], &data[j]).ok();
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    CorrelationMatrix { names, values }
}
