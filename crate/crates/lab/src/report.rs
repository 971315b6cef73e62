use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::{LabError, Result};

/// One asserted bound: `pass` iff `observed <= bound` (or the stated
/// relation, see `name`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
    pub pass: bool,
}

impl Assertion {
    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            bound,
            observed,
            pass: observed <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            bound,
            observed,
            pass: observed >= bound,
        }
    }

    /// Strict `observed < bound`.
    pub fn below(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            bound,
            observed,
            pass: observed < bound,
        }
    }
}

/// Long-format table, written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| LabError::Param(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub params: Value,
    pub seeds: Vec<u64>,
    pub assertions: Vec<Assertion>,
    /// Reported, never asserted.
    pub findings: BTreeMap<String, Value>,
    pub table: Table,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    params: &'a Value,
    seeds: &'a [u64],
    assertions: &'a [Assertion],
    findings: &'a BTreeMap<String, Value>,
    pass: bool,
}

impl Report {
    pub fn new(experiment: &str, params: &impl Serialize, seeds: Vec<u64>, table: Table) -> Result<Self> {
        Ok(Self {
            experiment: experiment.to_string(),
            params: serde_json::to_value(params)?,
            seeds,
            assertions: vec![],
            findings: BTreeMap::new(),
            table,
        })
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    /// Assertions whose name starts with `prefix`.
    pub fn assertions_with(&self, prefix: &str) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| a.name.starts_with(prefix)).collect()
    }

    pub fn finding(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.findings.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let s = Summary {
            experiment: &self.experiment,
            params: &self.params,
            seeds: &self.seeds,
            assertions: &self.assertions,
            findings: &self.findings,
            pass: self.passed(),
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }

    fn meta_json(&self) -> Result<String> {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "experiment": self.experiment,
            "martspline": env!("CARGO_PKG_VERSION"),
            "rustc_target": std::env::consts::ARCH,
            "os": std::env::consts::OS,
            "written_unix": now,
        });
        Ok(serde_json::to_string_pretty(&meta)? + "\n")
    }

    /// Writes `<name>.csv`, `<name>.summary.json` and `<name>.meta.json`,
    /// creating `dir` if needed. Only the meta file varies between runs.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|source| LabError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let files = [
            (format!("{}.csv", self.experiment), self.table.to_csv()?),
            (
                format!("{}.summary.json", self.experiment),
                self.summary_json()?.into_bytes(),
            ),
            (format!("{}.meta.json", self.experiment), self.meta_json()?.into_bytes()),
        ];
        let mut out = vec![];
        for (name, bytes) in files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|source| LabError::Io {
                path: path.clone(),
                source,
            })?;
            out.push(path);
        }
        Ok(out)
    }
}
