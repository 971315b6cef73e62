//! Pointwise convergence `P_n f(y) -> f(y)` on dense filtrations for a
//! catalog of smooth functions, with the martingale property checked on
//! every generated sequence.

use martspline::filtration::{build_filtration, FiltrationSpec};
use martspline::martingale::{convergence_probe, make_sequence, probe_points, verify_martingale_property, Reference, Source};

use crate::common::seed_list;
use crate::config::Config;
use crate::error::Result;
use crate::report::{Assertion, Report, Table};

pub fn run(cfg: &Config) -> Result<Report> {
    let p = &cfg.converge;
    let seed = cfg.seed;
    let mut table = Table::new(&["dim", "order", "function", "level", "max_error", "median_error", "fraction_below_tol"]);
    let mut assertions = vec![];
    let mut rates = serde_json::Map::new();
    let mut l1 = serde_json::Map::new();
    let mut worst_mart: f64 = 0.0;
    for &d in &p.dims {
        let f = build_filtration(&FiltrationSpec::new(d, [0.0, 1.0], p.depth, p.rule.clone(), seed))?;
        let probes = probe_points(&f, p.probes, seed ^ ((d as u64) << 40));
        let mart_probes = &probes[..p.martingale_probes.min(probes.len())];
        let catalog = if d == 1 { &p.catalog_1d } else { &p.catalog_2d };
        for &k in &p.orders {
            let orders = vec![k; d];
            let mut worst_fraction: f64 = 1.0;
            let mut worst_final: f64 = 0.0;
            for (fi, density) in catalog.iter().enumerate() {
                let seq = make_sequence(&f, &Source::Function { density: density.clone() }, &orders, p.depth)?;
                let mart = verify_martingale_property(&f, &seq, mart_probes)?;
                worst_mart = worst_mart.max(mart);
                let probe = convergence_probe(&seq, Reference::Function(density), &probes)?;
                for n in 1..=p.depth {
                    let mut errs: Vec<f64> = probe.errors.iter().map(|e| e[n - 1]).collect();
                    errs.sort_by(f64::total_cmp);
                    table.push([
                        d.to_string(),
                        k.to_string(),
                        fi.to_string(),
                        n.to_string(),
                        errs.last().copied().unwrap_or(0.0).to_string(),
                        errs[errs.len() / 2].to_string(),
                        probe.fraction_below(n, p.tol).to_string(),
                    ]);
                }
                worst_fraction = worst_fraction.min(probe.fraction_below(p.depth, p.tol));
                worst_final = probe.final_errors().into_iter().fold(worst_final, f64::max);
                rates.insert(format!("d{d}_k{k}_f{fi}"), serde_json::json!(probe.median_log_rate()));
                l1.insert(format!("d{d}_k{k}_f{fi}"), serde_json::json!(seq.l1_norms()?));
            }
            assertions.push(Assertion::at_least(format!("fraction_below_tol_d{d}_k{k}"), worst_fraction, 1.0));
            assertions.push(Assertion::below(format!("max_final_error_d{d}_k{k}"), worst_final, p.tol));
        }
    }
    assertions.push(Assertion::at_most("martingale_property", worst_mart, p.martingale_tol));
    let mut rep = Report::new("converge", p, seed_list(seed, 1), table)?;
    rep.assertions = assertions;
    rep.finding("median_log_rate_per_level", rates)?;
    rep.finding("l1_norms", l1)?;
    Ok(rep)
}
