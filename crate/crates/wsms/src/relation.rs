//! Tuples and relations with multiset semantics: the currency of the local
//! store. Duplicate rows are always preserved; nothing here deduplicates.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An attribute value. Comparisons across the two variants are a type error,
/// never a coercion.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RelationError {
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("row arity {got} does not match schema arity {want}")]
    Arity { got: usize, want: usize },
}

/// A multiset of rows over a named, ordered schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub schema: Vec<String>,
    pub rows: Vec<Row>,
}

impl Relation {
    pub fn new(schema: Vec<String>) -> Self {
        Relation { schema, rows: Vec::new() }
    }

    /// The 1-row, 0-column relation used to seed a pipeline: probing a source
    /// service once with an empty binding.
    pub fn seed() -> Self {
        Relation { schema: Vec::new(), rows: vec![Vec::new()] }
    }

    pub fn from_maps(rows: &[BTreeMap<String, Value>]) -> Self {
        let schema: Vec<String> = match rows.first() {
            Some(r) => r.keys().cloned().collect(),
            None => Vec::new(),
        };
        let data = rows
            .iter()
            .map(|r| schema.iter().map(|a| r[a].clone()).collect())
            .collect();
        Relation { schema, rows: data }
    }

    pub fn push_row(&mut self, row: Row) -> Result<(), RelationError> {
        if row.len() != self.schema.len() {
            return Err(RelationError::Arity { got: row.len(), want: self.schema.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn col(&self, attr: &str) -> Option<usize> {
        self.schema.iter().position(|a| a == attr)
    }

    pub fn value<'a>(&self, row: &'a Row, attr: &str) -> Result<&'a Value, RelationError> {
        self.col(attr)
            .map(|i| &row[i])
            .ok_or_else(|| RelationError::UnknownAttribute(attr.to_string()))
    }

    /// Canonical form for multiset comparison: columns sorted by name, then
    /// rows sorted. Two relations are multiset-equal iff their canonical rows
    /// and sorted schemas coincide, regardless of column order.
    pub fn canonical_rows(&self) -> (Vec<String>, Vec<Row>) {
        let mut idx: Vec<usize> = (0..self.schema.len()).collect();
        idx.sort_by(|&a, &b| self.schema[a].cmp(&self.schema[b]));
        let schema: Vec<String> = idx.iter().map(|&i| self.schema[i].clone()).collect();
        let mut rows: Vec<Row> = self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
            .collect();
        rows.sort();
        (schema, rows)
    }

    pub fn same_multiset(&self, other: &Relation) -> bool {
        self.canonical_rows() == other.canonical_rows()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV rendering: header row plus one line per row, `\n` endings.
    /// Values are alphanumeric by construction so no quoting is needed.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.schema.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_one_empty_row() {
        let s = Relation::seed();
        assert_eq!(s.len(), 1);
        assert!(s.schema.is_empty());
    }

    #[test]
    fn multiset_equality_ignores_column_order() {
        let a = Relation {
            schema: vec!["x".into(), "y".into()],
            rows: vec![vec![Value::Int(1), Value::Int(2)]],
        };
        let b = Relation {
            schema: vec!["y".into(), "x".into()],
            rows: vec![vec![Value::Int(2), Value::Int(1)]],
        };
        assert!(a.same_multiset(&b));
    }

    #[test]
    fn duplicates_are_distinguishing() {
        let mut a = Relation::new(vec!["x".into()]);
        a.push_row(vec![Value::Int(1)]).unwrap();
        let mut b = a.clone();
        b.push_row(vec![Value::Int(1)]).unwrap();
        assert!(!a.same_multiset(&b));
    }

    #[test]
    fn value_json_roundtrip() {
        let v: Value = serde_json::from_str("42").unwrap();
        assert_eq!(v, Value::Int(42));
        let v: Value = serde_json::from_str("\"Pune\"").unwrap();
        assert_eq!(v, Value::Str("Pune".into()));
    }
}
