use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::CliError;

/// Schema tag written at the top of every CSV file.
pub const SCHEMA: &str = "spinquad-v1";

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i8> for Cell {
    fn from(v: i8) -> Self {
        Cell::Int(v.into())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Table { name: name.into(), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV text with a schema comment line. Floats use 17 significant digits.
    pub fn to_csv(&self, subcommand: &str) -> String {
        let mut out = format!("# {SCHEMA} {subcommand}\n{}\n", self.columns.join(","));
        for row in &self.rows {
            for (k, cell) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = match cell {
                    Cell::Num(v) => write!(out, "{v:.16e}"),
                    Cell::Int(v) => write!(out, "{v}"),
                    Cell::Text(s) => write!(out, "{s}"),
                };
            }
            out.push('\n');
        }
        out
    }

    /// Column-oriented JSON object.
    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        for (k, col) in self.columns.iter().enumerate() {
            let values: Vec<Value> = self
                .rows
                .iter()
                .map(|row| match &row[k] {
                    Cell::Num(v) => json!(v),
                    Cell::Int(v) => json!(v),
                    Cell::Text(s) => json!(s),
                })
                .collect();
            map.insert((*col).to_string(), Value::Array(values));
        }
        Value::Object(map)
    }
}

/// Collects written files for the manifest.
pub struct Writer {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Writer { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("JSON values serialize") + "\n";
        self.write(name, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new("x", &["a", "level", "n"]);
        t.push(vec![0.1.into(), "g".into(), 3usize.into()]);
        let csv = t.to_csv("levels");
        assert_eq!(csv, "# spinquad-v1 levels\na,level,n\n1.0000000000000001e-1,g,3\n");
        // 17 significant digits round-trip
        let v: f64 = csv.lines().nth(2).unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.1);
    }

    #[test]
    fn json_columns() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![1.5.into(), "e".into()]);
        assert_eq!(t.to_json(), json!({"a": [1.5], "b": ["e"]}));
    }
}
