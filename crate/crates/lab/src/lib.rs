//! Experiment runner on top of `martspline`. Each experiment reads its
//! section of a TOML config, runs deterministically from the base seed and
//! returns a [`Report`] with a long-format table, asserted bounds and
//! unasserted findings.

pub mod common;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::{Config, ExperimentKind};
pub use error::{LabError, Result};
pub use report::{Assertion, Report, Table};

/// Runs one experiment and writes its three output files to `out`.
pub fn run_to_dir(kind: ExperimentKind, cfg: &Config, out: &Path) -> Result<(Report, Vec<PathBuf>)> {
    if let Some(found) = cfg.experiment {
        if found != kind {
            return Err(LabError::ExperimentMismatch {
                expected: kind.to_string(),
                found: found.to_string(),
            });
        }
    }
    let report = experiments::run(kind, cfg)?;
    let files = report.write(out)?;
    Ok((report, files))
}
