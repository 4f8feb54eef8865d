//! Decimated time series produced by simulations and experiment runs.

use crate::{Error, Result};

/// Rows of `(t, values...)` with named columns. The first column is always `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    /// Free-form key/value metadata (config hash, seed, tool version).
    pub metadata: Vec<(String, String)>,
}

impl TrajectoryRecord {
    /// `value_columns` excludes the leading `t` column.
    pub fn new<S: AsRef<str>>(value_columns: &[S]) -> Self {
        let mut columns = vec!["t".to_string()];
        columns.extend(value_columns.iter().map(|s| s.as_ref().to_string()));
        Self {
            columns,
            rows: Vec::new(),
            metadata: Vec::new(),
        }
    }

    /// Build from a full column list (including `t`) and rows, validating both.
    pub fn from_parts(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if columns.first().map(String::as_str) != Some("t") {
            return Err(Error::Alignment("first column must be `t`".into()));
        }
        let mut rec = Self {
            columns,
            rows: Vec::with_capacity(rows.len()),
            metadata: Vec::new(),
        };
        for row in rows {
            let t = row[0];
            rec.push(t, &row[1..])?;
        }
        Ok(rec)
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, t: f64, values: &[f64]) -> Result<()> {
        if values.len() + 1 != self.columns.len() {
            return Err(Error::Dimension {
                what: "record row",
                expected: self.columns.len() - 1,
                got: values.len(),
            });
        }
        if let Some(last) = self.rows.last() {
            if !(t > last[0]) {
                return Err(Error::Alignment(format!(
                    "time must increase strictly ({} after {})",
                    t, last[0]
                )));
            }
        }
        let mut row = Vec::with_capacity(values.len() + 1);
        row.push(t);
        row.extend_from_slice(values);
        self.rows.push(row);
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }

    /// Value of `name` in the final row.
    pub fn final_value(&self, name: &str) -> Option<f64> {
        let j = self.column_index(name)?;
        self.rows.last().map(|r| r[j])
    }
}
