//! Result tables: a `name [unit]` header and numeric rows.

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<(String, String)>,
    rows: Vec<Vec<f64>>,
}

/// Round to 12 significant digits, the precision written to every table.
pub fn sig12(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.11e}").parse().expect("formatted float parses")
    } else {
        x
    }
}

impl Table {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Self {
            columns: columns.iter().map(|(n, u)| (n.to_string(), u.to_string())).collect(),
            rows: Vec::new(),
        }
    }

    /// A one-row table from `(name, unit, value)` triples.
    pub fn single(entries: &[(&str, &str, f64)]) -> Self {
        let mut t = Self::new(&entries.iter().map(|(n, u, _)| (*n, *u)).collect::<Vec<_>>());
        t.push(entries.iter().map(|e| e.2).collect());
        t
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|(n, _)| n == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self
            .columns
            .iter()
            .map(|(n, u)| format!("{n} [{u}]"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.11e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let columns: Vec<Value> = self.columns.iter().map(|(n, u)| json!({ "name": n, "unit": u })).collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Array(r.iter().map(|&x| json!(sig12(x))).collect()))
            .collect();
        json!({ "columns": columns, "rows": rows })
    }
}

pub fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}
