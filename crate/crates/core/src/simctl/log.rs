//! Run log: three time-aligned tables and their CSV export.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    fn write_csv(&self, out: &mut String) {
        match self {
            Value::Int(v) => write!(out, "{v}").unwrap(),
            // shortest representation that parses back to the same bits
            Value::Float(v) => write!(out, "{v:?}").unwrap(),
            Value::Text(s) => out.push_str(s),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Value::Float(v)
        } else {
            Value::Text(format!("{v}"))
        }
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Int(v as i64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

/// One channel group sampled at a single rate. The first `index` columns
/// are the step counters and are always exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub index: usize,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, index: &[&str], channels: Vec<String>) -> Self {
        let mut columns: Vec<String> = index.iter().map(|s| s.to_string()).collect();
        columns.extend(channels);
        Self { name: name.to_string(), index: index.len(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn channels(&self) -> &[String] {
        &self.columns[self.index..]
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column by name.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column(name)?;
        self.rows.iter().map(|r| r[j].as_f64()).collect()
    }

    /// CSV with the index columns and the given channel columns, in table order.
    pub fn to_csv(&self, selected: &[usize]) -> String {
        let cols: Vec<usize> = (0..self.index).chain(selected.iter().copied()).collect();
        let mut out = String::new();
        out.push_str(&cols.iter().map(|&j| self.columns[j].as_str()).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            for (n, &j) in cols.iter().enumerate() {
                if n > 0 {
                    out.push(',');
                }
                row[j].write_csv(&mut out);
            }
            out.push('\n');
        }
        out
    }
}

/// Plant table (every `τ`), controller table (every `T_M`) and UC table
/// (every `T_H`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub plant: Table,
    pub ml: Table,
    pub hl: Table,
}

impl RunLog {
    pub fn tables(&self) -> [&Table; 3] {
        [&self.plant, &self.ml, &self.hl]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text)
            .map_err(|e| ConfigError::parse(&e))
    }

    /// CSV files per table for a channel selection. Channels are named
    /// `table.column` or just `column`; a table name selects all of its
    /// channels; an empty selection exports everything. Tables without a
    /// selected channel are omitted.
    pub fn export(&self, selection: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
        let mut picked: Vec<Vec<usize>> = vec![Vec::new(); 3];
        let tables = self.tables();
        if selection.is_empty() {
            for (t, p) in tables.iter().zip(&mut picked) {
                *p = (t.index..t.columns.len()).collect();
            }
        }
        for sel in selection {
            let (scope, name) = match sel.split_once('.') {
                Some((s, n)) if tables.iter().any(|t| t.name == s) => (Some(s), n),
                _ => (None, sel.as_str()),
            };
            let mut found = false;
            for (t, p) in tables.iter().zip(&mut picked) {
                if scope.is_some_and(|s| s != t.name) {
                    continue;
                }
                if scope.is_none() && name == t.name {
                    p.extend(t.index..t.columns.len());
                    found = true;
                } else if let Some(j) = t.column(name).filter(|&j| j >= t.index) {
                    p.push(j);
                    found = true;
                }
            }
            if !found {
                return Err(ConfigError::Schema {
                    field: "selection".into(),
                    line: None,
                    message: format!("unknown channel `{sel}`"),
                });
            }
        }
        let mut files = Vec::new();
        for (t, mut p) in tables.into_iter().zip(picked) {
            if p.is_empty() {
                continue;
            }
            p.sort_unstable();
            p.dedup();
            files.push((format!("{}.csv", t.name), t.to_csv(&p)));
        }
        Ok(files)
    }
}
