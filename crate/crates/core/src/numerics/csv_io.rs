//! CSV ingestion.
//!
//! A schema names the response column and the task, lists categorical
//! feature columns (one-hot encoded, categories in first-appearance order)
//! and columns to ignore. Schemas are small TOML files:
//!
//! ```toml
//! response = "class"
//! task = "classification"     # or "regression"
//! categorical = ["sex", "referral_source"]
//! ignore = ["id"]
//! missing = ["", "?", "NA"]   # tokens that mark a missing cell
//! delimiter = ","
//! classes = ["1", "2", "3"]   # optional explicit class order
//! ```
//!
//! Rows with a missing cell are dropped and counted in [`LoadReport`]. A
//! numeric cell that does not parse, or parses to NaN/Inf, is an error naming
//! its line.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Matrix, NumericsError, Response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub response: String,
    #[serde(default)]
    pub task: TaskKind,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into()]
}

fn default_delimiter() -> char {
    ','
}

impl CsvSchema {
    pub fn regression(response: &str) -> Self {
        Self {
            response: response.into(),
            task: TaskKind::Regression,
            categorical: Vec::new(),
            ignore: Vec::new(),
            missing: default_missing(),
            delimiter: ',',
            classes: None,
        }
    }

    pub fn classification(response: &str) -> Self {
        Self {
            task: TaskKind::Classification,
            ..Self::regression(response)
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, NumericsError> {
        toml::from_str(s).map_err(|e| NumericsError::Schema(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, NumericsError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// One-hot encoding of a single categorical column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    pub column: String,
    pub categories: Vec<String>,
}

impl CategoricalEncoder {
    /// Categories are kept in first-appearance order.
    pub fn fit<'a>(column: &str, values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut categories: Vec<String> = Vec::new();
        for v in values {
            if !categories.iter().any(|c| c == v) {
                categories.push(v.to_string());
            }
        }
        Self {
            column: column.into(),
            categories,
        }
    }

    pub fn width(&self) -> usize {
        self.categories.len()
    }

    pub fn encode(&self, value: &str) -> Option<Vec<f64>> {
        let k = self.categories.iter().position(|c| c == value)?;
        let mut out = vec![0.0; self.width()];
        out[k] = 1.0;
        Some(out)
    }

    pub fn decode(&self, code: &[f64]) -> Option<&str> {
        if code.len() != self.width() {
            return None;
        }
        let mut hot = code.iter().enumerate().filter(|(_, v)| **v != 0.0);
        let (k, v) = hot.next()?;
        if *v != 1.0 || hot.next().is_some() {
            return None;
        }
        Some(&self.categories[k])
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.categories
            .iter()
            .map(|c| format!("{}={}", self.column, c))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub encoders: Vec<CategoricalEncoder>,
    /// Class names in label order (classification only).
    pub class_names: Vec<String>,
}

enum ColumnRole {
    Numeric,
    Categorical(usize),
    Response,
    Ignored,
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(Dataset, LoadReport), NumericsError> {
    let file = std::fs::File::open(path)?;
    load_csv_from_reader(file, schema, &path.display().to_string())
}

pub(crate) fn load_csv_from_reader<R: std::io::Read>(
    reader: R,
    schema: &CsvSchema,
    name: &str,
) -> Result<(Dataset, LoadReport), NumericsError> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| NumericsError::Schema("delimiter must be a single ASCII character".into()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(reader);

    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(1, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(NumericsError::EmptyFile(name.into()));
    }
    let find = |c: &str| {
        header
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| NumericsError::UnknownColumn(c.into()))
    };
    let response_col = find(&schema.response)?;
    let mut roles: Vec<ColumnRole> = header.iter().map(|_| ColumnRole::Numeric).collect();
    roles[response_col] = ColumnRole::Response;
    for c in &schema.ignore {
        roles[find(c)?] = ColumnRole::Ignored;
    }
    for (k, c) in schema.categorical.iter().enumerate() {
        let j = find(c)?;
        if j == response_col {
            return Err(NumericsError::Schema(format!("`{c}` is the response column")));
        }
        roles[j] = ColumnRole::Categorical(k);
    }

    // first pass: keep complete rows as strings
    let mut kept: Vec<(u64, csv::StringRecord)> = Vec::new();
    let mut rows_read = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows_read += 1;
        if rec.len() != header.len() {
            return Err(NumericsError::Csv {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let missing = rec.iter().enumerate().any(|(j, v)| {
            !matches!(roles[j], ColumnRole::Ignored) && schema.missing.iter().any(|m| m == v.trim())
        });
        if !missing {
            kept.push((line, rec));
        }
    }
    if rows_read == 0 {
        return Err(NumericsError::EmptyFile(name.into()));
    }
    if kept.is_empty() {
        return Err(NumericsError::InvalidDataset(format!(
            "{name}: every row has a missing value"
        )));
    }

    let encoders: Vec<CategoricalEncoder> = schema
        .categorical
        .iter()
        .map(|c| {
            let j = header.iter().position(|h| h == c).unwrap();
            CategoricalEncoder::fit(c, kept.iter().map(|(_, r)| r[j].trim()))
        })
        .collect();

    let mut feature_names = Vec::new();
    for (j, role) in roles.iter().enumerate() {
        match role {
            ColumnRole::Numeric => feature_names.push(header[j].clone()),
            ColumnRole::Categorical(k) => feature_names.extend(encoders[*k].feature_names()),
            _ => {}
        }
    }
    if feature_names.is_empty() {
        return Err(NumericsError::Schema("no feature columns".into()));
    }

    let class_names: Vec<String> = match (schema.task, &schema.classes) {
        (TaskKind::Classification, Some(c)) => c.clone(),
        (TaskKind::Classification, None) => {
            CategoricalEncoder::fit("", kept.iter().map(|(_, r)| r[response_col].trim())).categories
        }
        (TaskKind::Regression, _) => Vec::new(),
    };
    let class_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut features = Matrix::zeros(0, feature_names.len());
    let mut reals = Vec::new();
    let mut labels = Vec::new();
    let mut row = Vec::with_capacity(feature_names.len());
    for (line, rec) in &kept {
        row.clear();
        for (j, role) in roles.iter().enumerate() {
            let v = rec[j].trim();
            match role {
                ColumnRole::Numeric => row.push(parse_finite(v, *line, &header[j])?),
                ColumnRole::Categorical(k) => row.extend(encoders[*k].encode(v).unwrap()),
                ColumnRole::Response => match schema.task {
                    TaskKind::Regression => reals.push(parse_finite(v, *line, &header[j])?),
                    TaskKind::Classification => {
                        labels.push(*class_index.get(v).ok_or_else(|| NumericsError::Csv {
                            line: *line,
                            message: format!("class `{v}` not in declared class list"),
                        })?)
                    }
                },
                ColumnRole::Ignored => {}
            }
        }
        features.push_row(&row)?;
    }

    let response = match schema.task {
        TaskKind::Regression => Response::Real(reals),
        TaskKind::Classification => Response::Class {
            labels,
            n_classes: class_names.len(),
        },
    };
    let ds = Dataset::new(features, response)?.with_feature_names(feature_names)?;
    Ok((
        ds,
        LoadReport {
            rows_read,
            rows_dropped: rows_read - kept.len(),
            encoders,
            class_names,
        },
    ))
}

fn parse_finite(v: &str, line: u64, column: &str) -> Result<f64, NumericsError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(_) => Err(NumericsError::Csv {
            line,
            message: format!("non-finite value `{v}` in column `{column}`"),
        }),
        Err(_) => Err(NumericsError::Csv {
            line,
            message: format!("cannot parse `{v}` in column `{column}` as a number"),
        }),
    }
}

fn csv_error(line: u64, e: csv::Error) -> NumericsError {
    NumericsError::Csv {
        line,
        message: e.to_string(),
    }
}
