pub mod converge;
pub mod covering;
pub mod decay;
pub mod nondense;
pub mod shadrin;
pub mod singular;
pub mod weaktype;

use crate::config::{Config, ExperimentKind};
use crate::error::Result;
use crate::report::Report;

pub fn run(kind: ExperimentKind, cfg: &Config) -> Result<Report> {
    match kind {
        ExperimentKind::Decay => decay::run(cfg),
        ExperimentKind::Shadrin => shadrin::run(cfg),
        ExperimentKind::Weaktype => weaktype::run(cfg),
        ExperimentKind::Covering => covering::run(cfg),
        ExperimentKind::Converge => converge::run(cfg),
        ExperimentKind::Singular => singular::run(cfg),
        ExperimentKind::Nondense => nondense::run(cfg),
    }
}
