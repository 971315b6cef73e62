//! Weak-type (1,1) ratios on a corpus of scaled single-atom spikes: the
//! intrinsic maximal function, the maximal projection `sup_n |P_n f|` and
//! (for `d = 1`) the Hardy-Littlewood baseline.

use martspline::filtration::{build_filtration, flat_index, unflat_index, AtomIndex, FiltrationSpec, TensorFiltration};
use martspline::maximal::{hl_maximal, level_sums, maximal_field, weak_type_constant, weak_type_sup, AtomMasses};
use martspline::projector::{QuadratureSpec, TensorProjector};
use rand::Rng;

use crate::common::{domination_constants, interior_fractions, rng, Domination};
use crate::config::{Config, WeaktypeParams};
use crate::error::Result;
use crate::report::{Assertion, Report, Table};

struct Spike {
    atom: Vec<usize>,
    height: f64,
}

/// Sampled `sup_n |P_n f|` as (value, volume) cells on the finest grid, and
/// the worst ratio of `|P_n f(x)|` to `C_k` times the level sum.
fn maximal_projection(
    f: &TensorFiltration,
    orders: &[usize],
    spike: &Spike,
    masses: &AtomMasses,
    dom: &Domination,
    samples: usize,
) -> Result<(Vec<(f64, f64)>, f64)> {
    let depth = f.depth();
    let d = f.dim();
    let fine_shape = f.shape(depth)?;
    let rect = f.rect(depth, &AtomIndex(spike.atom.clone()))?;
    let indicator = |x: &[f64], out: &mut [f64]| {
        out[0] = if rect.contains(x) { spike.height } else { 0.0 };
    };
    let kmax = orders.iter().copied().max().unwrap_or(1);
    let fine_parts = f.partitions(depth)?;
    let fr = interior_fractions(samples);
    let cells: usize = fine_shape.iter().product();
    let per_cell = samples.pow(d as u32);
    let mut sup = vec![0.0f64; cells * per_cell];
    let mut worst_dom: f64 = 0.0;
    for n in 1..=depth {
        let proj = TensorProjector::for_level(f, n, orders)?;
        let quad = QuadratureSpec {
            points: kmax.div_ceil(2).max(1),
            partitions: Some(fine_parts.clone()),
        };
        let spline = proj.project_function(&indicator, 1, &quad)?;
        let sums = level_sums(dom.q_hat, masses, f, n)?;
        let maps = f.parent_maps(depth, n)?;
        let coarse_shape = f.shape(n)?;
        for c in 0..cells {
            let idx = unflat_index(&fine_shape, c);
            let r = f.rect(depth, &AtomIndex(idx.clone()))?;
            let parent: Vec<usize> = idx.iter().zip(&maps).map(|(&j, m)| m[j]).collect();
            let bound = dom.c_k * sums[flat_index(&coarse_shape, &parent)];
            for s in 0..per_cell {
                let sub = unflat_index(&vec![samples; d], s);
                let x: Vec<f64> = (0..d)
                    .map(|l| {
                        let iv = r.sides[l];
                        iv.lo + fr[sub[l]] * iv.width()
                    })
                    .collect();
                let v = spline.eval(&x)?[0].abs();
                let slot = &mut sup[c * per_cell + s];
                *slot = slot.max(v);
                if v > 0.0 {
                    worst_dom = worst_dom.max(v / bound);
                }
            }
        }
    }
    let vols: Vec<f64> = (0..cells)
        .map(|c| f.rect(depth, &AtomIndex(unflat_index(&fine_shape, c))).map(|r| r.volume()))
        .collect::<martspline::Result<_>>()?;
    let pairs = sup
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, vols[i / per_cell] / per_cell as f64))
        .collect();
    Ok((pairs, worst_dom))
}

fn corpus(f: &TensorFiltration, p: &WeaktypeParams, seed: u64) -> Result<Vec<Spike>> {
    let shape = f.shape(f.depth())?;
    let mut r = rng(seed ^ ((f.dim() as u64) << 40));
    Ok((0..p.spikes)
        .map(|_| Spike {
            atom: shape.iter().map(|&m| r.gen_range(0..m)).collect(),
            height: r.gen_range(0.5..5.0),
        })
        .collect())
}

pub fn run(cfg: &Config) -> Result<Report> {
    let p = &cfg.weaktype;
    let seed = cfg.seed;
    let mut table = Table::new(&["dim", "operator", "param", "spike", "ratio", "bound"]);
    let mut assertions = vec![];
    let mut constants = serde_json::Map::new();
    for &d in &p.dims {
        let depth = if d == 1 { p.depth_1d } else { p.depth_2d };
        let f = build_filtration(&FiltrationSpec::new(d, [0.0, 1.0], depth, p.rule.clone(), seed))?;
        let spikes = corpus(&f, p, seed)?;
        let fine_shape = f.shape(depth)?;
        let spike_masses: Vec<(AtomMasses, f64)> = spikes
            .iter()
            .map(|s| {
                let vol = f.rect(depth, &AtomIndex(s.atom.clone()))?.volume();
                let mut m = vec![0.0; fine_shape.iter().product()];
                m[flat_index(&fine_shape, &s.atom)] = s.height * vol;
                Ok((AtomMasses::from_finest(&f, m)?, s.height * vol))
            })
            .collect::<Result<_>>()?;

        for &q in &p.qs {
            let bound = weak_type_constant(q, d);
            let mut worst: f64 = 0.0;
            for (i, (masses, norm)) in spike_masses.iter().enumerate() {
                let field = maximal_field(q, masses, &f, 1, depth)?;
                let ratio = field.weak_type_sup(&f, None)?.0 / norm;
                worst = worst.max(ratio);
                table.push([d.to_string(), "maximal".into(), q.to_string(), i.to_string(), ratio.to_string(), bound.to_string()]);
            }
            assertions.push(Assertion::at_most(format!("maximal_d{d}_q{q}"), worst, bound));
        }

        if d == 1 {
            let part = f.partitions(depth)?[0];
            let mut worst: f64 = 0.0;
            for (i, (masses, norm)) in spike_masses.iter().enumerate() {
                let field = hl_maximal(part, masses.level(depth))?;
                let pairs = field.iter().enumerate().map(|(j, &v)| (v, part.width(j))).collect();
                let ratio = weak_type_sup(pairs).0 / norm;
                worst = worst.max(ratio);
                table.push(["1".into(), "hardy_littlewood".into(), String::new(), i.to_string(), ratio.to_string(), p.hl_constant.to_string()]);
            }
            assertions.push(Assertion::at_most("hardy_littlewood_d1", worst, p.hl_constant));
        }

        for &k in &p.orders {
            let orders = vec![k; d];
            let dom = domination_constants(&f, &orders, 1..=depth)?;
            let bound = dom.c_k * weak_type_constant(dom.q_hat, d);
            let mut worst: f64 = 0.0;
            let mut worst_dom: f64 = 0.0;
            for (i, (spike, (masses, norm))) in spikes.iter().zip(&spike_masses).enumerate() {
                let (pairs, dom_ratio) = maximal_projection(&f, &orders, spike, masses, &dom, p.samples_per_axis)?;
                let ratio = weak_type_sup(pairs).0 / norm;
                worst = worst.max(ratio);
                worst_dom = worst_dom.max(dom_ratio);
                table.push([d.to_string(), "maximal_projection".into(), k.to_string(), i.to_string(), ratio.to_string(), bound.to_string()]);
            }
            assertions.push(Assertion::at_most(format!("maximal_projection_d{d}_k{k}"), worst, bound));
            assertions.push(Assertion::at_most(format!("spline_domination_d{d}_k{k}"), worst_dom, 1.0));
            constants.insert(format!("d{d}_k{k}"), serde_json::to_value(&dom)?);
        }
    }
    let mut rep = Report::new("weaktype", p, vec![seed], table)?;
    rep.assertions = assertions;
    rep.finding("domination_constants", constants)?;
    Ok(rep)
}
