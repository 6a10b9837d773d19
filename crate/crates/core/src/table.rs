//! Schema-typed tabular container with an explicit missingness model.
//!
//! Cells are stored column-major as `Option`s so that a cell can never both
//! hold a value and be flagged missing.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
}

impl ColumnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Demographic,
    ClinicalOnset,
    ClinicalRecent,
    ClinicalCurrentWeek,
    Environmental,
    Meta,
    Outcome,
}

impl Category {
    /// Predictor columns are everything except bookkeeping and the label.
    pub fn is_predictor(self) -> bool {
        !matches!(self, Category::Meta | Category::Outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub category: Category,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, category: Category) -> Self {
        Self {
            name: name.into(),
            kind,
            category,
        }
    }

    pub fn numeric(name: impl Into<String>, category: Category) -> Self {
        Self::new(name, ColumnKind::Numeric, category)
    }

    pub fn binary(name: impl Into<String>, category: Category) -> Self {
        Self::new(name, ColumnKind::Binary, category)
    }

    pub fn categorical(name: impl Into<String>, category: Category) -> Self {
        Self::new(name, ColumnKind::Categorical, category)
    }
}

/// Checks the schema-level invariants: unique names, binary outcomes.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for spec in schema {
        if !seen.insert(spec.name.as_str()) {
            return Err(Error::DuplicateColumn(spec.name.clone()));
        }
        if spec.category == Category::Outcome && spec.kind != ColumnKind::Binary {
            return Err(Error::ColumnKind {
                column: spec.name.clone(),
                expected: "binary",
                found: spec.kind.as_str(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Binary(Vec<Option<bool>>),
    Categorical {
        levels: Vec<Arc<str>>,
        codes: Vec<Option<u32>>,
    },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Binary(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Binary(_) => ColumnKind::Binary,
            ColumnData::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Binary(v) => v[row].is_none(),
            ColumnData::Categorical { codes, .. } => codes[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&r| self.is_missing(r)).count()
    }

    /// Numeric view; binary columns are coerced to 0/1.
    pub fn as_f64(&self) -> Option<Vec<Option<f64>>> {
        match self {
            ColumnData::Numeric(v) => Some(v.clone()),
            ColumnData::Binary(v) => Some(v.iter().map(|b| b.map(|b| if b { 1.0 } else { 0.0 })).collect()),
            ColumnData::Categorical { .. } => None,
        }
    }

    pub fn empty(kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
            ColumnKind::Binary => ColumnData::Binary(Vec::new()),
            ColumnKind::Categorical => ColumnData::Categorical {
                levels: Vec::new(),
                codes: Vec::new(),
            },
        }
    }

    fn take(&self, rows: &[usize]) -> Self {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Binary(v) => ColumnData::Binary(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { levels, codes } => ColumnData::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }

    fn render(&self, row: usize) -> String {
        match self {
            ColumnData::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_else(|| "NA".into()),
            ColumnData::Binary(v) => match v[row] {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => "NA".into(),
            },
            ColumnData::Categorical { levels, codes } => codes[row]
                .map(|c| levels[c as usize].to_string())
                .unwrap_or_else(|| "NA".into()),
        }
    }
}

/// A borrowed view of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<'a> {
    Missing,
    Number(f64),
    Flag(bool),
    Level(&'a str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: Vec<ColumnSpec>,
    columns: Vec<ColumnData>,
    n_rows: usize,
}

impl DataTable {
    pub fn new(schema: Vec<ColumnSpec>, columns: Vec<ColumnData>) -> Result<Self> {
        validate_schema(&schema)?;
        if schema.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.len(),
                found: columns.len(),
            });
        }
        let n_rows = columns.first().map_or(0, ColumnData::len);
        for (spec, col) in schema.iter().zip(&columns) {
            if col.kind() != spec.kind {
                return Err(Error::ColumnKind {
                    column: spec.name.clone(),
                    expected: spec.kind.as_str(),
                    found: col.kind().as_str(),
                });
            }
            if col.len() != n_rows {
                return Err(Error::InvalidArgument(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    spec.name,
                    col.len()
                )));
            }
            if let ColumnData::Numeric(v) = col {
                if let Some(r) = v.iter().position(|x| matches!(x, Some(x) if !x.is_finite())) {
                    return Err(Error::cell(r, &spec.name, "non-finite value"));
                }
            }
        }
        Ok(Self {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schema.iter().map(|s| s.name.as_str())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.schema.iter().any(|s| s.name == name)
    }

    pub fn spec(&self, name: &str) -> Result<&ColumnSpec> {
        Ok(&self.schema[self.column_index(name)?])
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn column_at(&self, idx: usize) -> &ColumnData {
        &self.columns[idx]
    }

    pub fn columns(&self) -> impl Iterator<Item = (&ColumnSpec, &ColumnData)> {
        self.schema.iter().zip(&self.columns)
    }

    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.column(name)? {
            ColumnData::Numeric(v) => Ok(v),
            other => Err(Error::ColumnKind {
                column: name.to_string(),
                expected: "numeric",
                found: other.kind().as_str(),
            }),
        }
    }

    /// Numeric or binary column as floats (binary coerced to 0/1).
    pub fn as_f64(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let col = self.column(name)?;
        col.as_f64().ok_or_else(|| Error::ColumnKind {
            column: name.to_string(),
            expected: "numeric or binary",
            found: "categorical",
        })
    }

    /// Fully observed binary column, as required of outcomes.
    pub fn labels(&self, name: &str) -> Result<Vec<bool>> {
        match self.column(name)? {
            ColumnData::Binary(v) => v
                .iter()
                .enumerate()
                .map(|(r, b)| b.ok_or_else(|| Error::cell(r, name, "missing outcome")))
                .collect(),
            other => Err(Error::ColumnKind {
                column: name.to_string(),
                expected: "binary",
                found: other.kind().as_str(),
            }),
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell<'_> {
        match &self.columns[col] {
            ColumnData::Numeric(v) => v[row].map_or(Cell::Missing, Cell::Number),
            ColumnData::Binary(v) => v[row].map_or(Cell::Missing, Cell::Flag),
            ColumnData::Categorical { levels, codes } => {
                codes[row].map_or(Cell::Missing, |c| Cell::Level(&levels[c as usize]))
            }
        }
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.columns[col].is_missing(row)
    }

    /// `n × p` missingness mask, row-major.
    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        (0..self.n_rows)
            .map(|r| self.columns.iter().map(|c| c.is_missing(r)).collect())
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<DataTable> {
        let mut schema = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let idx = self.column_index(name.as_ref())?;
            schema.push(self.schema[idx].clone());
            columns.push(self.columns[idx].clone());
        }
        DataTable::new(schema, columns)
    }

    pub fn without_columns<S: AsRef<str>>(&self, names: &[S]) -> DataTable {
        let drop: BTreeSet<&str> = names.iter().map(|s| s.as_ref()).collect();
        let (schema, columns) = self
            .schema
            .iter()
            .zip(&self.columns)
            .filter(|(s, _)| !drop.contains(s.name.as_str()))
            .map(|(s, c)| (s.clone(), c.clone()))
            .unzip();
        DataTable {
            schema,
            columns,
            n_rows: self.n_rows,
        }
    }

    pub(crate) fn replace_column(&mut self, idx: usize, data: ColumnData) {
        assert_eq!(data.len(), self.n_rows);
        assert_eq!(data.kind(), self.schema[idx].kind);
        self.columns[idx] = data;
    }

    /// Writes the table as CSV with `NA` for missing cells.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(self.names())?;
        for r in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| c.render(r)))?;
        }
        w.flush().map_err(|e| Error::io("<csv sink>", e))?;
        Ok(())
    }
}

pub fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NA".into(), "NaN".into()]
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "t" => Some(true),
        "0" | "false" | "no" | "n" | "f" => Some(false),
        _ => None,
    }
}

/// Parses RFC-4180 CSV into a table conforming to `schema`.
///
/// Header order need not match the schema; the result follows schema order.
pub fn read_csv_table<R: Read>(source: R, schema: &[ColumnSpec], missing_tokens: &[String]) -> Result<DataTable> {
    validate_schema(schema)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();

    let by_name: HashMap<&str, usize> = schema.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let mut position = vec![None; schema.len()];
    for (h_idx, h) in headers.iter().enumerate() {
        let h = h.trim();
        let s_idx = *by_name.get(h).ok_or_else(|| Error::UnknownColumn(h.to_string()))?;
        if position[s_idx].replace(h_idx).is_some() {
            return Err(Error::DuplicateColumn(h.to_string()));
        }
    }
    let position: Vec<usize> = position
        .iter()
        .zip(schema)
        .map(|(p, s)| p.ok_or_else(|| Error::MissingColumn(s.name.clone())))
        .collect::<Result<_>>()?;

    let mut columns: Vec<ColumnData> = schema.iter().map(|s| ColumnData::empty(s.kind)).collect();
    let mut interners: Vec<HashMap<Arc<str>, u32>> = vec![HashMap::new(); schema.len()];

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (c, spec) in schema.iter().enumerate() {
            let raw = record.get(position[c]).unwrap_or("");
            let missing = missing_tokens.iter().any(|t| t == raw) || missing_tokens.iter().any(|t| t == raw.trim());
            match &mut columns[c] {
                ColumnData::Numeric(v) => {
                    if missing {
                        v.push(None);
                    } else {
                        let x: f64 = raw
                            .trim()
                            .parse()
                            .map_err(|_| Error::cell(row, &spec.name, format!("cannot parse `{raw}` as a number")))?;
                        if !x.is_finite() {
                            return Err(Error::cell(row, &spec.name, "non-finite value"));
                        }
                        v.push(Some(x));
                    }
                }
                ColumnData::Binary(v) => {
                    if missing {
                        v.push(None);
                    } else {
                        let b = parse_bool(raw)
                            .ok_or_else(|| Error::cell(row, &spec.name, format!("cannot parse `{raw}` as binary")))?;
                        v.push(Some(b));
                    }
                }
                ColumnData::Categorical { levels, codes } => {
                    if missing {
                        codes.push(None);
                    } else {
                        let key: Arc<str> = Arc::from(raw.trim());
                        let interner = &mut interners[c];
                        let code = match interner.get(&key) {
                            Some(&code) => code,
                            None => {
                                let code = levels.len() as u32;
                                levels.push(key.clone());
                                interner.insert(key, code);
                                code
                            }
                        };
                        codes.push(Some(code));
                    }
                }
            }
        }
    }
    DataTable::new(schema.to_vec(), columns)
}

/// `count(missing) / n` for one column.
pub fn missing_fraction(table: &DataTable, column: &str) -> Result<f64> {
    let col = table.column(column)?;
    if table.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    Ok(col.missing_count() as f64 / table.n_rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_schema() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::numeric("a", Category::Environmental),
            ColumnSpec::categorical("b", Category::Demographic),
        ]
    }

    #[test]
    fn parses_simple_row() {
        let t = read_csv_table("a,b\n1.5,x\n".as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap();
        assert_eq!(t.n_rows(), 1);
        assert_eq!(t.cell(0, 0), Cell::Number(1.5));
        assert_eq!(t.cell(0, 1), Cell::Level("x"));
        assert!(t.missing_mask().iter().flatten().all(|m| !m));
    }

    #[test]
    fn missing_token_is_flagged() {
        let t = read_csv_table("a,b\nNA,x\n".as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap();
        assert!(t.is_missing(0, 0));
        assert_eq!(t.cell(0, 0), Cell::Missing);
    }

    #[test]
    fn bad_numeric_names_row_and_column() {
        let err = read_csv_table("a,b\nabc,x\n".as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => {
                assert_eq!(row, 0);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_order_is_free() {
        let t = read_csv_table("b,a\ny,2\n".as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap();
        assert_eq!(t.cell(0, 0), Cell::Number(2.0));
    }

    #[test]
    fn unknown_and_duplicate_headers() {
        let tokens = default_missing_tokens();
        assert!(matches!(
            read_csv_table("a,b,c\n1,x,2\n".as_bytes(), &ab_schema(), &tokens),
            Err(Error::UnknownColumn(c)) if c == "c"
        ));
        assert!(matches!(
            read_csv_table("a,a,b\n1,1,x\n".as_bytes(), &ab_schema(), &tokens),
            Err(Error::DuplicateColumn(_))
        ));
    }

    #[test]
    fn outcome_must_be_binary() {
        let schema = vec![ColumnSpec::numeric("y", Category::Outcome)];
        assert!(validate_schema(&schema).is_err());
    }

    #[test]
    fn missing_fractions() {
        let csv = "a,b\n1,x\nNA,x\n3,x\nNA,x\n5,x\n6,x\nNA,x\n8,x\n9,x\n10,x\n";
        let t = read_csv_table(csv.as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap();
        assert!((missing_fraction(&t, "a").unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(missing_fraction(&t, "b").unwrap(), 0.0);
        let all = read_csv_table("a,b\nNA,x\n,y\n".as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap();
        assert_eq!(missing_fraction(&all, "a").unwrap(), 1.0);
        let empty = read_csv_table("a,b\n".as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap();
        assert!(matches!(missing_fraction(&empty, "a"), Err(Error::EmptyTable)));
        assert!(matches!(missing_fraction(&t, "zz"), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn csv_write_then_read_preserves_cells() {
        let csv = "a,b\n1.25,x\nNA,y\n-3,NA\n";
        let t = read_csv_table(csv.as_bytes(), &ab_schema(), &default_missing_tokens()).unwrap();
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let back = read_csv_table(out.as_slice(), &ab_schema(), &default_missing_tokens()).unwrap();
        assert_eq!(t, back);
    }
}
