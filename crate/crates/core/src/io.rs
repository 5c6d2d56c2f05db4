//! Small CSV tables with a `# key=value ...` provenance line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            ..Self::default()
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    /// Values are written with `{}` formatting, which round-trips `f64`
    /// exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.meta.is_empty() {
            let pairs: Vec<String> = self.meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "# {}", pairs.join(" "));
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            path: origin.to_string(),
            detail,
        };
        let mut table = CsvTable::default();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
        while let Some(line) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else { break };
            for pair in rest.split_whitespace() {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| bad(format!("bad metadata entry '{pair}'")))?;
                table.meta.insert(k.to_string(), v.to_string());
            }
            lines.next();
        }
        let header = lines.next().ok_or_else(|| bad("missing header row".into()))?;
        table.columns = header.split(',').map(|s| s.trim().to_string()).collect();
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
            if row.len() != table.columns.len() {
                return Err(bad(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    table.columns.len()
                )));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let mut t = CsvTable::new(vec!["t".into(), "x".into()]).with_meta("dt", 0.1);
        t.rows.push(vec![0.1 + 0.2, -1.0 / 3.0]);
        t.rows.push(vec![1e-300, 7.0]);
        let back = CsvTable::parse(&t.to_text(), "mem").unwrap();
        assert_eq!(back, t);
        assert_eq!(back.meta_f64("dt"), Some(0.1));
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(CsvTable::parse("a,b\n1,2\n3\n", "mem").is_err());
        assert!(CsvTable::parse("a,b\n1,x\n", "mem").is_err());
    }
}
