//! Uniform boundedness of the orthoprojectors in `L^inf`: sampled operator
//! norms across levels and seeds, and the product structure in `d = 2`.

use martspline::bspline::SplineSpace1D;
use martspline::filtration::{build_filtration, FiltrationSpec};
use martspline::projector::{GramSystem, TensorProjector};

use crate::common::{extent, seed_list};
use crate::config::Config;
use crate::error::Result;
use crate::report::{Assertion, Report, Table};

pub fn run(cfg: &Config) -> Result<Report> {
    let p = &cfg.shadrin;
    let seeds = seed_list(cfg.seed, p.seeds);
    let mut table = Table::new(&["dim", "orders", "seed", "level", "norm", "axis_product"]);
    let mut assertions = vec![];
    let mut plateaus = serde_json::Map::new();
    for &k in &p.orders {
        let mut worst_unit: f64 = 0.0;
        let mut worst_var: f64 = 0.0;
        let mut top: f64 = 0.0;
        let mut last_level = vec![];
        for &seed in &seeds {
            let f = build_filtration(&FiltrationSpec::new(1, [0.0, 1.0], p.depth, p.rule.clone(), seed))?;
            let mut norms = Vec::with_capacity(p.depth);
            for n in 1..=p.depth {
                let g = GramSystem::new(SplineSpace1D::new(f.axis(0).level(n)?.clone(), k)?)?;
                let v = g.operator_norm_inf(p.samples_per_atom, p.quad_points)?.value;
                table.push([
                    "1".to_string(),
                    k.to_string(),
                    seed.to_string(),
                    n.to_string(),
                    v.to_string(),
                    String::new(),
                ]);
                norms.push(v);
            }
            let (lo, hi) = extent(&norms);
            top = top.max(hi);
            last_level.push(*norms.last().unwrap());
            if k == 1 {
                worst_unit = norms.iter().map(|v| (v - 1.0).abs()).fold(worst_unit, f64::max);
            } else {
                worst_var = worst_var.max((hi - lo) / hi);
            }
        }
        if k == 1 {
            assertions.push(Assertion::at_most("k1_unit_norm", worst_unit, p.unit_tol));
        } else {
            assertions.push(Assertion::below(format!("k{k}_depth_variation"), worst_var, p.variation_tol));
        }
        let mean = last_level.iter().sum::<f64>() / last_level.len().max(1) as f64;
        plateaus.insert(
            format!("k{k}"),
            serde_json::json!({ "max_norm": top, "mean_deepest_level": mean }),
        );
    }

    let mut worst_product: f64 = 0.0;
    if !p.tensor_orders.is_empty() {
        let seed = seeds.first().copied().unwrap_or(cfg.seed);
        let f = build_filtration(&FiltrationSpec::new(2, [0.0, 1.0], p.tensor_depth, p.rule.clone(), seed))?;
        for orders in &p.tensor_orders {
            for n in 1..=p.tensor_depth {
                let proj = TensorProjector::for_level(&f, n, orders)?;
                let full = proj.operator_norm_inf(p.samples_per_atom, p.quad_points)?.value;
                let product: f64 = proj
                    .grams()
                    .iter()
                    .map(|g| g.operator_norm_inf(p.samples_per_atom, p.quad_points).map(|o| o.value))
                    .collect::<martspline::Result<Vec<_>>>()?
                    .iter()
                    .product();
                worst_product = worst_product.max((full - product).abs() / product);
                let label = orders.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("x");
                table.push([
                    "2".to_string(),
                    label,
                    seed.to_string(),
                    n.to_string(),
                    full.to_string(),
                    product.to_string(),
                ]);
            }
        }
        assertions.push(Assertion::at_most("tensor_norm_is_axis_product", worst_product, p.tensor_tol));
    }

    let mut rep = Report::new("shadrin", p, seeds, table)?;
    rep.assertions = assertions;
    rep.finding("norms", plateaus)?;
    Ok(rep)
}
