//! Fixed-precision text tables, each mirrored as JSON lines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value as Json};

use crate::error::{Error, Result};
use crate::metrics::NativeMetric;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// A metric on the [0, 1] scale, shown x100 with two decimals.
    Score(f64),
    /// Shown with four decimals, unscaled.
    Raw(f64),
    /// Four significant digits.
    PValue(f64),
    Count(usize),
    Text(String),
    Missing,
}

impl Value {
    /// `Score` for the built-in ROUGE variants, `Raw` for anything else.
    pub fn metric(name: &str, v: f64) -> Value {
        if NativeMetric::from_name(name).is_some() {
            Value::Score(v)
        } else {
            Value::Raw(v)
        }
    }

    pub fn render(&self) -> String {
        match self {
            Value::Score(v) => format!("{:.2}", v * 100.0),
            Value::Raw(v) => format!("{v:.4}"),
            Value::PValue(p) => format_p(*p),
            Value::Count(n) => n.to_string(),
            Value::Text(s) => s.clone(),
            Value::Missing => "-".into(),
        }
    }

    fn json(&self) -> Json {
        match self {
            Value::Score(v) | Value::Raw(v) | Value::PValue(v) => Json::from(*v),
            Value::Count(n) => Json::from(*n),
            Value::Text(s) => Json::from(s.as_str()),
            Value::Missing => Json::Null,
        }
    }
}

/// Four significant digits; scientific below 1e-4.
pub fn format_p(p: f64) -> String {
    if p == 0.0 {
        return "0.000".into();
    }
    if p.abs() < 1e-4 {
        return format!("{p:.3e}");
    }
    let decimals = (3 - p.abs().log10().floor() as i32).max(0) as usize;
    format!("{p:.decimals$}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Value>)>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new<S: Into<String>>(name: &str, columns: impl IntoIterator<Item = S>) -> Self {
        Report {
            name: name.to_string(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn row(&mut self, label: impl Into<String>, values: Vec<Value>) -> &mut Self {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((label.into(), values));
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(label, vals)| std::iter::once(label.clone()).chain(vals.iter().map(Value::render)).collect())
            .collect();
        let header: Vec<String> = std::iter::once(String::new()).chain(self.columns.iter().cloned()).collect();
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = format!("# {}\n", self.name);
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        for row in std::iter::once(&header).chain(&cells) {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let mut m = Map::new();
            m.insert("report".into(), Json::from(self.name.as_str()));
            m.insert("note".into(), Json::from(n.as_str()));
            out.push_str(&Json::Object(m).to_string());
            out.push('\n');
        }
        for (label, vals) in &self.rows {
            let mut m = Map::new();
            m.insert("report".into(), Json::from(self.name.as_str()));
            m.insert("row".into(), Json::from(label.as_str()));
            for (c, v) in self.columns.iter().zip(vals) {
                m.insert(c.clone(), v.json());
            }
            out.push_str(&Json::Object(m).to_string());
            out.push('\n');
        }
        out
    }

    /// Writes `<name>.txt` and `<name>.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (ext, body) in [("txt", self.to_text()), ("jsonl", self.to_jsonl())] {
            let path = dir.join(format!("{}.{ext}", self.name));
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
