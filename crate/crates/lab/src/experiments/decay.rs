//! Biorthogonality, partition of unity and geometric decay of the duals on
//! seeded random nested partitions.

use martspline::bspline::SplineSpace1D;
use martspline::filtration::{build_filtration, FiltrationSpec};
use martspline::projector::GramSystem;
use rand::Rng;

use crate::common::{rng, seed_list};
use crate::config::Config;
use crate::error::Result;
use crate::report::{Assertion, Report, Table};

pub fn run(cfg: &Config) -> Result<Report> {
    let p = &cfg.decay;
    let seeds = seed_list(cfg.seed, p.seeds);
    let mut table = Table::new(&["k", "seed", "level", "dim", "quantity", "s", "value"]);
    let mut worst_biorth: f64 = 0.0;
    let mut worst_pou: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    let mut worst_q: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    let mut non_monotone = 0usize;
    let mut spaces = 0usize;
    let mut profiled = 0usize;
    for &k in &p.orders {
        for &seed in &seeds {
            let f = build_filtration(&FiltrationSpec::new(1, [0.0, 1.0], p.depth, p.rule.clone(), seed))?;
            let mut pts = rng(seed ^ ((k as u64) << 32));
            for n in 1..=p.depth {
                let part = f.axis(0).level(n)?.clone();
                let space = SplineSpace1D::new(part, k)?;
                if space.dim() > p.max_dim {
                    break;
                }
                let dim = space.dim();
                let g = GramSystem::new(space)?;
                spaces += 1;
                let mut row = |q: &str, s: String, v: f64| table.push([k.to_string(), seed.to_string(), n.to_string(), dim.to_string(), q.to_string(), s, v.to_string()]);

                let b = g.biorthogonality_error()?;
                worst_biorth = worst_biorth.max(b);
                row("biorthogonality", String::new(), b);

                let mut pou: f64 = 0.0;
                let mut lowest = f64::INFINITY;
                for _ in 0..p.pou_points {
                    let x: f64 = pts.gen();
                    let (_, vals) = g.space().eval_basis(x.max(f64::MIN_POSITIVE))?;
                    pou = pou.max((vals.iter().sum::<f64>() - 1.0).abs());
                    lowest = vals.iter().copied().fold(lowest, f64::min);
                }
                worst_pou = worst_pou.max(pou);
                min_value = min_value.min(lowest);
                row("partition_of_unity", String::new(), pou);
                row("min_basis_value", String::new(), lowest);

                if dim >= 2 * k {
                    let prof = g.decay_profile(p.samples_per_atom)?;
                    profiled += 1;
                    worst_q = worst_q.max(prof.q_hat);
                    worst_residual = worst_residual.max(prof.residual);
                    if !prof.nonincreasing_from(k) {
                        non_monotone += 1;
                    }
                    row("q_hat", String::new(), prof.q_hat);
                    row("c_hat", String::new(), prof.c_hat);
                    row("fit_residual", String::new(), prof.residual);
                    for (s, v) in prof.values.iter().enumerate() {
                        row("profile", s.to_string(), *v);
                    }
                }
            }
        }
    }
    let mut rep = Report::new("decay", p, seeds, table)?;
    rep.assertions.push(Assertion::at_most("biorthogonality", worst_biorth, p.biorth_tol));
    rep.assertions.push(Assertion::at_most("partition_of_unity", worst_pou, p.pou_tol));
    rep.assertions.push(Assertion::at_least("nonnegativity", min_value, -p.negativity_tol));
    rep.assertions.push(Assertion::below("q_hat", worst_q, p.q_max));
    rep.assertions.push(Assertion::at_most("profile_monotone_beyond_k", non_monotone as f64, 0.0));
    rep.finding("spaces_checked", spaces)?;
    rep.finding("spaces_profiled", profiled)?;
    rep.finding("max_fit_residual", worst_residual)?;
    Ok(rep)
}
