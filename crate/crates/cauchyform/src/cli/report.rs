//! JSON run reports and the append-only output directory.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const REPORT_SCHEMA: &str = "cauchyform-report-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    /// Passes iff value ≤ tolerance.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        let status = if value <= tolerance { CheckStatus::Pass } else { CheckStatus::Fail };
        Check { name: name.into(), status, value: Some(value), tolerance: Some(tolerance), note: None }
    }
    pub fn flag(name: &str, ok: bool, note: impl Into<String>) -> Self {
        let status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        Check { name: name.into(), status, value: None, tolerance: None, note: Some(note.into()) }
    }
    pub fn skipped(name: &str, why: impl Into<String>) -> Self {
        Check { name: name.into(), status: CheckStatus::Skipped, value: None, tolerance: None, note: Some(why.into()) }
    }
    pub fn failed(name: &str, why: impl Into<String>) -> Self {
        Check { name: name.into(), status: CheckStatus::Fail, value: None, tolerance: None, note: Some(why.into()) }
    }
    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: CheckStatus,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub data: BTreeMap<String, Value>,
}

impl Report {
    pub fn new(command: &str, experiment: &str, config_hash: String, seed: u64) -> Self {
        Report {
            schema: REPORT_SCHEMA,
            command: command.into(),
            experiment: experiment.into(),
            config_hash,
            seed,
            status: CheckStatus::Pass,
            tolerances: BTreeMap::new(),
            checks: Vec::new(),
            data: BTreeMap::new(),
        }
    }

    pub fn check(&mut self, c: Check) {
        if let Some(t) = c.tolerance {
            self.tolerances.insert(c.name.clone(), t);
        }
        if c.status == CheckStatus::Fail {
            self.status = CheckStatus::Fail;
        }
        self.checks.push(c);
    }

    pub fn data<T: Serialize>(&mut self, key: &str, v: &T) -> Result<()> {
        let v = serde_json::to_value(v).map_err(|e| Error::Parse(e.to_string()))?;
        self.data.insert(key.into(), v);
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Output directory of one experiment. Files are created exclusively; an
/// existing name gets the next free numeric suffix, so earlier runs are
/// never overwritten.
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn create(base: &Path, experiment: &str) -> Result<Self> {
        let root = base.join(experiment);
        std::fs::create_dir_all(&root)?;
        Ok(OutputDir { root })
    }

    /// Writes `stem.ext`, or `stem-2.ext`, `stem-3.ext`, … if taken.
    pub fn write_new(&self, stem: &str, ext: &str, bytes: &[u8]) -> Result<PathBuf> {
        for n in 1.. {
            let name = if n == 1 { format!("{stem}.{ext}") } else { format!("{stem}-{n}.{ext}") };
            let path = self.root.join(name);
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(bytes)?;
                    return Ok(path);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
        unreachable!()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_and_tolerances() {
        let mut r = Report::new("verify", "x", "h".into(), 1);
        r.check(Check::at_most("a", 1e-12, 1e-10));
        r.check(Check::skipped("b", "n/a"));
        assert!(r.passed());
        r.check(Check::at_most("c", 1.0, 0.5));
        assert!(!r.passed());
        assert_eq!(r.tolerances.len(), 2);
        assert!(r.to_json().contains("cauchyform-report-v1"));
    }

    #[test]
    fn never_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), "e").unwrap();
        let a = out.write_new("verify", "json", b"1").unwrap();
        let b = out.write_new("verify", "json", b"2").unwrap();
        assert_ne!(a, b);
        assert_eq!(std::fs::read(&a).unwrap(), b"1");
        assert!(b.ends_with("verify-2.json"));
    }
}
