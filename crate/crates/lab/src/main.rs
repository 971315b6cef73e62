use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use martspline_lab::{run_to_dir, Config, ExperimentKind, LabError};

#[derive(Parser)]
#[command(name = "martspline", version, about = "Seeded spline projector experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Biorthogonality, partition of unity and dual decay profiles
    Decay(Common),
    /// Operator norms of the projectors across levels
    Shadrin(Common),
    /// Weak-type ratios on a spike corpus
    Weaktype(Common),
    /// Covering bound with the explicit constant
    Covering(Common),
    /// Pointwise convergence on dense filtrations
    Converge(Common),
    /// Hybrid measures with point masses
    Singular(Common),
    /// Frozen regions and limit dual B-splines
    Nondense(Common),
    /// Experiment named by the config's `experiment` key
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Depth override for every filtration of the experiment
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

fn execute(kind: Option<ExperimentKind>, c: Common) -> Result<bool, LabError> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let kind = match kind.or(cfg.experiment) {
        Some(k) => k,
        None => return Err(LabError::Param("`run` needs a config with an `experiment` key".into())),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = c.depth {
        cfg.override_depth(kind, d);
    }
    let (report, files) = run_to_dir(kind, &cfg, &c.out)?;
    if !c.quiet {
        for a in &report.assertions {
            println!(
                "{} {:<40} observed {:<12.6e} bound {:.6e}",
                if a.pass { "PASS" } else { "FAIL" },
                a.name,
                a.observed,
                a.bound
            );
        }
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Decay(c) => (Some(ExperimentKind::Decay), c),
        Command::Shadrin(c) => (Some(ExperimentKind::Shadrin), c),
        Command::Weaktype(c) => (Some(ExperimentKind::Weaktype), c),
        Command::Covering(c) => (Some(ExperimentKind::Covering), c),
        Command::Converge(c) => (Some(ExperimentKind::Converge), c),
        Command::Singular(c) => (Some(ExperimentKind::Singular), c),
        Command::Nondense(c) => (Some(ExperimentKind::Nondense), c),
        Command::Run(c) => (None, c),
    };
    match execute(kind, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
