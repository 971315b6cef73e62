//! Acceptance run: every experiment with its default configuration, one
//! PASS/FAIL line per criterion, then a single assertion over all of them.
//!
//! Takes several minutes. Run with
//! `cargo test --release -p martspline-lab --test acceptance -- --nocapture`.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use martspline_lab::{experiments, run_to_dir, Assertion, Config, ExperimentKind, Report};

struct Criterion {
    number: usize,
    title: &'static str,
    checks: Vec<Assertion>,
    runtime: Option<(Duration, Duration)>,
    note: String,
}

impl Criterion {
    fn new(number: usize, title: &'static str) -> Self {
        Self {
            number,
            title,
            checks: vec![],
            runtime: None,
            note: String::new(),
        }
    }

    fn take(mut self, report: &Report, prefixes: &[&str]) -> Self {
        for a in &report.assertions {
            if prefixes.iter().any(|p| a.name.starts_with(p)) {
                let mut a = a.clone();
                a.name = format!("{}/{}", report.experiment, a.name);
                self.checks.push(a);
            }
        }
        self
    }

    fn within(mut self, took: Duration, limit_secs: u64) -> Self {
        self.runtime = Some((took, Duration::from_secs(limit_secs)));
        self
    }

    fn pass(&self) -> bool {
        !self.checks.is_empty()
            && self.checks.iter().all(|a| a.pass)
            && self.runtime.map_or(true, |(t, lim)| t <= lim)
    }

    fn print(&self) {
        let verdict = if self.pass() { "PASS" } else { "FAIL" };
        let passed = self.checks.iter().filter(|a| a.pass).count();
        let mut line = format!(
            "{verdict} criterion {:>2}  {:<34} {passed}/{} checks",
            self.number,
            self.title,
            self.checks.len()
        );
        if let Some((t, lim)) = self.runtime {
            line += &format!(", runtime {:.1}s (limit {}s)", t.as_secs_f64(), lim.as_secs());
        }
        if !self.note.is_empty() {
            line += &format!(", {}", self.note);
        }
        println!("{line}");
        for a in self.checks.iter().filter(|a| !a.pass) {
            println!("       failed {:<44} observed {:.6e}  bound {:.6e}", a.name, a.observed, a.bound);
        }
    }
}

fn timed(kind: ExperimentKind, cfg: &Config) -> (Report, Duration) {
    let start = Instant::now();
    let report = experiments::run(kind, cfg).unwrap_or_else(|e| panic!("{kind} failed to run: {e}"));
    (report, start.elapsed())
}

/// Small configurations so that each experiment runs twice in seconds.
fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.decay.seeds = 2;
    cfg.override_depth(ExperimentKind::Decay, 6);
    cfg.shadrin.seeds = 2;
    cfg.shadrin.orders = vec![1, 2];
    cfg.shadrin.tensor_orders = vec![vec![2, 2]];
    cfg.override_depth(ExperimentKind::Shadrin, 4);
    cfg.covering.seeds = 2;
    cfg.override_depth(ExperimentKind::Covering, 4);
    cfg.weaktype.spikes = 4;
    cfg.override_depth(ExperimentKind::Weaktype, 3);
    cfg.converge.probes = 40;
    cfg.override_depth(ExperimentKind::Converge, 4);
    cfg.singular.probes = 30;
    cfg.override_depth(ExperimentKind::Singular, 4);
    cfg.override_depth(ExperimentKind::Nondense, 6);
    cfg
}

fn meta_without_timestamp(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("written_unix");
    v
}

/// Runs every experiment twice into separate directories and compares the
/// outputs. The meta file carries a wall-clock timestamp, so it is compared
/// with that one field removed.
fn determinism() -> Criterion {
    let cfg = small_config();
    let mut c = Criterion::new(10, "determinism");
    let mut mismatches = vec![];
    for kind in ExperimentKind::ALL {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (_, files_a) = run_to_dir(kind, &cfg, a.path()).unwrap();
        let (_, files_b) = run_to_dir(kind, &cfg, b.path()).unwrap();
        for (fa, fb) in files_a.iter().zip(&files_b) {
            let name = fa.file_name().unwrap().to_string_lossy().into_owned();
            let same = if name.ends_with(".meta.json") {
                meta_without_timestamp(fa) == meta_without_timestamp(fb)
            } else {
                fs::read(fa).unwrap() == fs::read(fb).unwrap()
            };
            if !same {
                mismatches.push(name.clone());
            }
            c.checks.push(Assertion::at_most(format!("identical/{name}"), if same { 0.0 } else { 1.0 }, 0.0));
        }
    }
    if !mismatches.is_empty() {
        c.note = format!("differing: {}", mismatches.join(" "));
    }
    c
}

#[test]
fn acceptance_criteria() {
    let cfg = Config::default();
    let (decay, t_decay) = timed(ExperimentKind::Decay, &cfg);
    let (shadrin, t_shadrin) = timed(ExperimentKind::Shadrin, &cfg);
    let (covering, t_covering) = timed(ExperimentKind::Covering, &cfg);
    let (weaktype, _) = timed(ExperimentKind::Weaktype, &cfg);
    let (converge, _) = timed(ExperimentKind::Converge, &cfg);
    let (singular, _) = timed(ExperimentKind::Singular, &cfg);
    let (nondense, _) = timed(ExperimentKind::Nondense, &cfg);

    let criteria = vec![
        Criterion::new(1, "biorthogonality")
            .take(&decay, &["biorthogonality"])
            .within(t_decay, 60),
        Criterion::new(2, "partition of unity, nonnegativity").take(&decay, &["partition_of_unity", "nonnegativity"]),
        Criterion::new(3, "uniform boundedness of P_n")
            .take(&shadrin, &["k1_unit_norm", "k2_depth", "k3_depth", "k4_depth", "tensor_norm"])
            .within(t_shadrin, 300),
        Criterion::new(4, "dual geometric decay").take(&decay, &["q_hat", "profile_monotone"]),
        Criterion::new(5, "covering bound")
            .take(&covering, &["ratio_grid", "ratio_exact"])
            .within(t_covering, 600),
        Criterion::new(6, "weak type (1,1)").take(&weaktype, &["maximal_", "hardy_littlewood"]),
        Criterion::new(7, "martingale property")
            .take(&converge, &["martingale_property"])
            .take(&singular, &["martingale_property"])
            .take(&nondense, &["martingale_property"]),
        Criterion::new(8, "convergence, dense filtrations")
            .take(&converge, &["fraction_below_tol", "max_final_error"])
            .take(&singular, &["converges_to_density", "dirac_below_envelope", "dirac_log_slope"]),
        Criterion::new(9, "non-dense filtrations").take(&nondense, &["dual_delta", "frozen_limit"]),
        determinism(),
    ];

    println!();
    for c in &criteria {
        c.print();
    }
    let failed: Vec<usize> = criteria.iter().filter(|c| !c.pass()).map(|c| c.number).collect();
    println!(
        "acceptance: {}/{} criteria pass",
        criteria.len() - failed.len(),
        criteria.len()
    );
    assert!(failed.is_empty(), "criteria failing: {failed:?}");
}
