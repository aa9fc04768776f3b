//! Typed tabular data: schema, columnar storage with a MISSING sentinel,
//! CSV ingestion/export and seeded splitting.
//!
//! Numeric columns store MISSING as NaN; parsed numeric cells are always
//! finite, so NaN never collides with an observed value. Categorical columns
//! store codes into a sorted level dictionary shared by every dataset derived
//! from the same source, which keeps one-hot layouts aligned between train
//! and test partitions.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Code used for MISSING in categorical columns.
pub const MISSING_CODE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("header mismatch: expected [{expected}], found [{found}]")]
    HeaderMismatch { expected: String, found: String },
    #[error("line {line}: expected {expected} cells, found {found}")]
    Arity {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column '{column}': cannot parse '{value}' as a finite number")]
    BadNumber {
        line: u64,
        column: String,
        value: String,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("train fraction must lie in (0, 1), got {0}")]
    FractionOutOfRange(f64),
    #[error("dataset has {0} rows; at least 2 are required to split")]
    TooSmall(usize),
    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Numeric,
        }
    }

    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Categorical,
        }
    }
}

/// Learning task implied by the kind of the label attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

/// Ordered attribute list plus the label, optional sensitive attribute and
/// the class treated as positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<Attribute>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
}

impl Schema {
    pub fn new(
        attributes: Vec<Attribute>,
        label: &str,
        sensitive: Option<&str>,
        positive_label: Option<&str>,
    ) -> Result<Self, DataError> {
        let schema = Self {
            attributes,
            label: label.to_string(),
            sensitive: sensitive.map(str::to_string),
            positive_label: positive_label.map(str::to_string),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.attributes.is_empty() {
            return Err(DataError::Schema("no attributes declared".into()));
        }
        for (i, a) in self.attributes.iter().enumerate() {
            if self.attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(DataError::Schema(format!(
                    "duplicate attribute '{}'",
                    a.name
                )));
            }
        }
        if self.index_of(&self.label).is_none() {
            return Err(DataError::Schema(format!(
                "label '{}' is not a declared attribute",
                self.label
            )));
        }
        if let Some(s) = &self.sensitive {
            if self.index_of(s).is_none() {
                return Err(DataError::Schema(format!(
                    "sensitive attribute '{s}' is not declared"
                )));
            }
        }
        if self.positive_label.is_some() && self.task() == Task::Regression {
            return Err(DataError::Schema(
                "positive_label given for a numeric (regression) label".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let schema: Schema =
            serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, DataError> {
        self.index_of(name)
            .ok_or_else(|| DataError::UnknownAttribute(name.to_string()))
    }

    pub fn label_index(&self) -> usize {
        self.index_of(&self.label).expect("validated schema")
    }

    pub fn sensitive_index(&self) -> Option<usize> {
        self.sensitive.as_deref().and_then(|s| self.index_of(s))
    }

    pub fn kind(&self, index: usize) -> AttributeKind {
        self.attributes[index].kind
    }

    pub fn task(&self) -> Task {
        match self.kind(self.label_index()) {
            AttributeKind::Categorical => Task::Classification,
            AttributeKind::Numeric => Task::Regression,
        }
    }

    /// Indices of every attribute except the label, in schema order.
    pub fn feature_indices(&self) -> Vec<usize> {
        let label = self.label_index();
        (0..self.attributes.len()).filter(|&i| i != label).collect()
    }
}

/// Borrowed view of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<'a> {
    Num(f64),
    Cat(&'a str),
    Missing,
}

/// Owned cell value, used to build datasets row by row.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
    Missing,
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Cat(v.to_string())
    }
}

#[derive(Debug, Clone)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical {
        levels: Arc<Vec<String>>,
        codes: Vec<u32>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_nan(),
            Column::Categorical { codes, .. } => codes[row] == MISSING_CODE,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match self {
            Column::Categorical { levels, .. } => Some(levels),
            Column::Numeric(_) => None,
        }
    }

    /// Level code for `token`, if the token is part of this column's dictionary.
    pub fn code_of(&self, token: &str) -> Option<u32> {
        self.levels()
            .and_then(|l| l.binary_search_by(|x| x.as_str().cmp(token)).ok())
            .map(|i| i as u32)
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical { levels, codes } => Column::Categorical {
                levels: Arc::clone(levels),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }

    pub(crate) fn set_missing(&mut self, row: usize) {
        match self {
            Column::Numeric(v) => v[row] = f64::NAN,
            Column::Categorical { codes, .. } => codes[row] = MISSING_CODE,
        }
    }
}

impl PartialEq for Column {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Column::Numeric(a), Column::Numeric(b)) => {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| (x.is_nan() && y.is_nan()) || x.to_bits() == y.to_bits())
            }
            (
                Column::Categorical {
                    levels: la,
                    codes: ca,
                },
                Column::Categorical {
                    levels: lb,
                    codes: cb,
                },
            ) => {
                if la == lb {
                    return ca == cb;
                }
                ca.len() == cb.len()
                    && ca.iter().zip(cb).all(|(&x, &y)| {
                        let tx = (x != MISSING_CODE).then(|| &la[x as usize]);
                        let ty = (y != MISSING_CODE).then(|| &lb[y as usize]);
                        tx == ty
                    })
            }
            _ => false,
        }
    }
}

/// Immutable-by-convention columnar dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    /// Builds a dataset from owned rows. Categorical dictionaries are the
    /// sorted set of observed tokens.
    pub fn from_rows(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self, DataError> {
        schema.validate()?;
        let width = schema.attributes.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DataError::Arity {
                    line: i as u64 + 1,
                    expected: width,
                    found: row.len(),
                });
            }
        }
        let mut columns = Vec::with_capacity(width);
        for (j, attr) in schema.attributes.iter().enumerate() {
            let column = match attr.kind {
                AttributeKind::Numeric => {
                    let mut values = Vec::with_capacity(rows.len());
                    for (i, row) in rows.iter().enumerate() {
                        values.push(match &row[j] {
                            Value::Num(v) if v.is_finite() => *v,
                            Value::Missing => f64::NAN,
                            other => {
                                return Err(DataError::BadNumber {
                                    line: i as u64 + 1,
                                    column: attr.name.clone(),
                                    value: format!("{other:?}"),
                                })
                            }
                        });
                    }
                    Column::Numeric(values)
                }
                AttributeKind::Categorical => {
                    let tokens: Vec<Option<String>> = rows
                        .iter()
                        .map(|row| match &row[j] {
                            Value::Cat(s) => Some(s.clone()),
                            Value::Num(v) => Some(format!("{v}")),
                            Value::Missing => None,
                        })
                        .collect();
                    categorical_from_tokens(tokens)
                }
            };
            columns.push(column);
        }
        Ok(Self {
            schema: Arc::new(schema),
            columns,
            n_rows: rows.len(),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<Schema> {
        Arc::clone(&self.schema)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column, DataError> {
        Ok(&self.columns[self.schema.require(name)?])
    }

    pub(crate) fn column_mut(&mut self, index: usize) -> &mut Column {
        &mut self.columns[index]
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell<'_> {
        match &self.columns[col] {
            Column::Numeric(v) => {
                if v[row].is_nan() {
                    Cell::Missing
                } else {
                    Cell::Num(v[row])
                }
            }
            Column::Categorical { levels, codes } => match codes[row] {
                MISSING_CODE => Cell::Missing,
                c => Cell::Cat(&levels[c as usize]),
            },
        }
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.columns[col].is_missing(row)
    }

    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| (0..self.n_rows).filter(|&r| c.is_missing(r)).count())
            .sum()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Seeded subsample of `round(fraction * N)` rows (at least one),
    /// preserving source order.
    pub fn sample(&self, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DataError::FractionOutOfRange(fraction));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let n = ((fraction * self.n_rows as f64).round() as usize).clamp(1, self.n_rows);
        let mut idx: Vec<usize> = (0..self.n_rows).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen = idx[..n].to_vec();
        chosen.sort_unstable();
        Ok(self.select_rows(&chosen))
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| DataError::Csv {
            line: 0,
            message: e.to_string(),
        };
        w.write_record(self.schema.attributes.iter().map(|a| a.name.as_str()))
            .map_err(csv_err)?;
        let mut record: Vec<String> = Vec::with_capacity(self.columns.len());
        for row in 0..self.n_rows {
            record.clear();
            for col in 0..self.columns.len() {
                record.push(match self.cell(row, col) {
                    Cell::Num(v) => format!("{v}"),
                    Cell::Cat(s) => s.to_string(),
                    Cell::Missing => String::new(),
                });
            }
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }
}

fn categorical_from_tokens(tokens: Vec<Option<String>>) -> Column {
    let mut levels: Vec<String> = tokens.iter().flatten().cloned().collect();
    levels.sort_unstable();
    levels.dedup();
    let codes = tokens
        .iter()
        .map(|t| match t {
            Some(s) => levels.binary_search(s).expect("level present") as u32,
            None => MISSING_CODE,
        })
        .collect();
    Column::Categorical {
        levels: Arc::new(levels),
        codes,
    }
}

/// CSV parsing options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Token read as MISSING in addition to the empty cell.
    pub missing_token: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            missing_token: "?".to_string(),
        }
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset, DataError> {
    load_csv_with(path, schema, &CsvOptions::default())
}

pub fn load_csv_with(
    path: &Path,
    schema: &Schema,
    options: &CsvOptions,
) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema, options)
}

/// Parses CSV text (header row first) against `schema`.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &Schema,
    options: &CsvOptions,
) -> Result<Dataset, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| DataError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    let names: Vec<&str> = schema.attributes.iter().map(|a| a.name.as_str()).collect();
    if header.len() != names.len() || header.iter().zip(&names).any(|(h, n)| h.trim() != *n) {
        return Err(DataError::HeaderMismatch {
            expected: names.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let width = names.len();
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); width];
    let mut tokens: Vec<Vec<Option<String>>> = vec![Vec::new(); width];
    let mut n_rows = 0usize;
    for (i, result) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = result.map_err(|e| DataError::Csv {
            line,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(DataError::Arity {
                line,
                expected: width,
                found: record.len(),
            });
        }
        for (j, raw) in record.iter().enumerate() {
            let trimmed = raw.trim();
            let missing = trimmed.is_empty() || trimmed == options.missing_token;
            match schema.attributes[j].kind {
                AttributeKind::Numeric => {
                    let v = if missing {
                        f64::NAN
                    } else {
                        match trimmed.parse::<f64>() {
                            Ok(v) if v.is_finite() => v,
                            _ => {
                                return Err(DataError::BadNumber {
                                    line,
                                    column: names[j].to_string(),
                                    value: raw.to_string(),
                                })
                            }
                        }
                    };
                    numeric[j].push(v);
                }
                AttributeKind::Categorical => {
                    tokens[j].push((!missing).then(|| raw.to_string()));
                }
            }
        }
        n_rows += 1;
    }

    let columns = schema
        .attributes
        .iter()
        .enumerate()
        .map(|(j, a)| match a.kind {
            AttributeKind::Numeric => Column::Numeric(std::mem::take(&mut numeric[j])),
            AttributeKind::Categorical => categorical_from_tokens(std::mem::take(&mut tokens[j])),
        })
        .collect();
    Ok(Dataset {
        schema: Arc::new(schema.clone()),
        columns,
        n_rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

/// Shuffles row indices with ChaCha8 seeded by `seed` and cuts the first
/// `round(train_fraction * N)` (kept within `1..N`) into the training side.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitResult, DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::FractionOutOfRange(train_fraction));
    }
    let n = dataset.n_rows();
    if n < 2 {
        return Err(DataError::TooSmall(n));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(SplitResult {
        train: dataset.select_rows(&idx[..n_train]),
        test: dataset.select_rows(&idx[n_train..]),
        seed,
    })
}

/// Re-encodes datasets loaded separately against one schema so their
/// categorical columns share a single sorted level dictionary.
pub fn unify_levels(parts: &[Dataset]) -> Result<Vec<Dataset>, DataError> {
    let Some(first) = parts.first() else {
        return Ok(Vec::new());
    };
    if parts.iter().any(|p| p.schema() != first.schema()) {
        return Err(DataError::Schema("datasets have different schemas".into()));
    }
    let mut out: Vec<Dataset> = parts.to_vec();
    for c in 0..first.n_columns() {
        if first.schema().kind(c) != AttributeKind::Categorical {
            continue;
        }
        let mut union: Vec<String> = parts
            .iter()
            .flat_map(|p| p.column(c).levels().unwrap_or(&[]).iter().cloned())
            .collect();
        union.sort();
        union.dedup();
        let levels = Arc::new(union);
        for (part, target) in parts.iter().zip(out.iter_mut()) {
            let Column::Categorical { levels: old, codes } = part.column(c) else {
                unreachable!("kind checked")
            };
            let remap: Vec<u32> = old
                .iter()
                .map(|l| levels.binary_search(l).expect("level in union") as u32)
                .collect();
            let codes = codes
                .iter()
                .map(|&k| if k == MISSING_CODE { k } else { remap[k as usize] })
                .collect();
            target.columns[c] = Column::Categorical {
                levels: Arc::clone(&levels),
                codes,
            };
        }
    }
    Ok(out)
}

impl fmt::Display for Cell<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Cat(s) => f.write_str(s),
            Cell::Missing => f.write_str("⊥"),
        }
    }
}
