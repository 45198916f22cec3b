use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-evaluation metric lines: `epoch,split,metric,value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    lines: Vec<(usize, String, String, f64)>,
}

impl MetricLog {
    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64) {
        self.lines.push((epoch, split.into(), metric.into(), value));
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &str, &str, f64)> {
        self.lines
            .iter()
            .map(|(e, s, m, v)| (*e, s.as_str(), m.as_str(), *v))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch,split,metric,value\n");
        for (e, split, m, v) in self.entries() {
            let _ = writeln!(s, "{e},{split},{m},{v:?}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_text())
    }
}

/// Ordered `key=value` results.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push((key.into(), format!("{value:?}")));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
