//! Filtrations that stop refining on a region `V`: detection of the frozen
//! intervals, convergence of the dual B-splines there and of the sequence
//! on frozen atoms against the deepest level.

use martspline::filtration::{build_filtration, FiltrationSpec, RefinementRule, TensorFiltration};
use martspline::martingale::{make_sequence, verify_martingale_property, Source};
use martspline::measures::{euclidean_norm, HybridMeasure};
use martspline::nondense::{detect_v_sets, limit_dual_table_tensor, VInterval};
use rand::Rng;

use crate::common::{rng, seed_list};
use crate::config::{Config, NondenseCase};
use crate::error::{LabError, Result};
use crate::report::{Assertion, Report, Table};

/// Uniform points of `V_1 x ... x V_d`, kept a relative `1e-6` away from the
/// deepest-level breakpoints.
fn probes_in(f: &TensorFiltration, vs: &[VInterval], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let parts: Vec<_> = f.axes().iter().map(|a| a.levels().last().expect("depth >= 1")).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let y: Vec<f64> = vs.iter().map(|v| v.lo + (v.hi - v.lo) * r.gen::<f64>()).collect();
        let clear = parts.iter().zip(&y).all(|(p, &c)| {
            p.breakpoints().iter().all(|&b| (b - c).abs() > 1e-6 * p.domain().width())
        });
        if clear {
            out.push(y);
        }
    }
    out
}

fn run_case(
    ci: usize,
    case: &NondenseCase,
    seed: u64,
    table: &mut Table,
    assertions: &mut Vec<Assertion>,
    findings: &mut serde_json::Map<String, serde_json::Value>,
) -> Result<f64> {
    let d = case.dim;
    let rule = RefinementRule::FrozenOnSubinterval {
        frozen: case.frozen.clone(),
    };
    let f = build_filtration(&FiltrationSpec::new(d, [0.0, 1.0], case.depth, rule, seed))?;
    let mut vs = vec![];
    for l in 0..d {
        let rep = detect_v_sets(f.axis(l), case.tolerance, case.lookback)?;
        for v in &rep.intervals {
            table.push([
                ci.to_string(),
                d.to_string(),
                String::new(),
                "v_interval".into(),
                l.to_string(),
                format!("{}:{}", v.lo, v.hi),
                format!("{:?}/{:?}", v.left, v.right),
            ]);
        }
        findings.insert(format!("case{ci}_axis{l}_v_sets"), serde_json::to_value(&rep)?);
        let v = rep
            .intervals
            .first()
            .cloned()
            .ok_or_else(|| LabError::Param(format!("case {ci}: no frozen interval detected on axis {l}")))?;
        vs.push(v);
    }
    let probes = probes_in(&f, &vs, case.probes, seed ^ ((ci as u64) << 32));
    let truncated = f.truncated(case.dual_level)?;
    let source = Source::Measure {
        measure: HybridMeasure::absolutely_continuous(d, case.source.clone())?.with_quad_points(case.quad_points),
    };
    let mut worst_mart: f64 = 0.0;
    for &k in &case.orders {
        let orders = vec![k; d];
        let tag = format!("case{ci}_d{d}_k{k}");

        let duals = limit_dual_table_tensor(&truncated, &vs, &orders, &vec![case.r; d], &probes)?;
        for (n, delta) in duals.deltas.iter().enumerate() {
            table.push([ci.to_string(), d.to_string(), k.to_string(), "dual_delta".into(), (n + 2).to_string(), delta.to_string(), String::new()]);
        }
        assertions.push(Assertion::at_most(format!("dual_delta_{tag}"), duals.final_delta(), case.delta_tol));
        let worst_decay = duals
            .decay
            .iter()
            .map(|c| c.scaled_value / c.bound)
            .fold(0.0, f64::max);
        assertions.push(Assertion::at_most(format!("dual_decay_{tag}"), worst_decay, 1.0));

        let seq = make_sequence(&f, &source, &orders, case.depth)?;
        let mart_probes = &probes[..probes.len().min(8)];
        worst_mart = worst_mart.max(verify_martingale_property(&f, &seq, mart_probes)?);
        let last = seq.level(case.depth)?;
        let mut gaps = vec![0.0f64; case.depth];
        for y in &probes {
            let want = last.eval(y)?;
            for (n, gap) in gaps.iter_mut().enumerate() {
                let v = seq.level(n + 1)?.eval(y)?;
                let diff: Vec<f64> = v.iter().zip(&want).map(|(a, b)| a - b).collect();
                *gap = gap.max(euclidean_norm(&diff));
            }
        }
        for (n, g) in gaps.iter().enumerate() {
            table.push([ci.to_string(), d.to_string(), k.to_string(), "gap_to_deepest".into(), (n + 1).to_string(), g.to_string(), String::new()]);
        }
        assertions.push(Assertion::at_most(format!("frozen_limit_{tag}"), gaps[case.check_level - 1], case.limit_tol));
        findings.insert(
            tag,
            serde_json::json!({
                "dual_settled_from": duals.settled_from(),
                "dual_q_hat": duals.q_hat,
                "dual_c_hat": duals.c_hat,
                "l1_norms": seq.l1_norms()?,
            }),
        );
    }
    Ok(worst_mart)
}

pub fn run(cfg: &Config) -> Result<Report> {
    let p = &cfg.nondense;
    let seed = cfg.seed;
    let mut table = Table::new(&["case", "dim", "order", "quantity", "level", "value", "detail"]);
    let mut assertions = vec![];
    let mut findings = serde_json::Map::new();
    let mut worst_mart: f64 = 0.0;
    for (ci, case) in p.cases.iter().enumerate() {
        worst_mart = worst_mart.max(run_case(ci, case, seed, &mut table, &mut assertions, &mut findings)?);
    }
    let tol = p.cases.iter().map(|c| c.martingale_tol).fold(f64::INFINITY, f64::min);
    assertions.push(Assertion::at_most("martingale_property", worst_mart, tol));
    let mut rep = Report::new("nondense", p, seed_list(seed, 1), table)?;
    rep.assertions = assertions;
    rep.findings = findings.into_iter().collect();
    rep.finding("classifier_note", martspline::nondense::FROZEN_NOTE)?;
    Ok(rep)
}
