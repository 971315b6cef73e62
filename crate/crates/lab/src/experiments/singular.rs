//! Hybrid measures `g dlambda + sum m delta`: the sequence converges to `g`
//! at probe points and the point-mass part decays like `q_hat^{d_n}`.

use martspline::bspline::{SplineSpace1D, TensorSpline};
use martspline::filtration::{build_filtration, FiltrationSpec, TensorFiltration};
use martspline::martingale::{convergence_probe, make_sequence, probe_points, verify_martingale_property, least_squares_slope, Reference, Source};
use martspline::measures::{euclidean_norm, HybridMeasure};
use martspline::projector::{GramSystem, TensorProjector, DEFAULT_SAMPLES_PER_ATOM, PROFILE_FLOOR};

use crate::common::{domination_constants, seed_list, Domination};
use crate::config::Config;
use crate::error::Result;
use crate::report::{Assertion, Report, Table};

/// Largest `max_n prod_l ||P_n^l||` over the levels.
fn shadrin_constant(f: &TensorFiltration, orders: &[usize]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for n in 1..=f.depth() {
        let mut prod = 1.0;
        for (l, &k) in orders.iter().enumerate() {
            let g = GramSystem::new(SplineSpace1D::new(f.axis(l).level(n)?.clone(), k)?)?;
            prod *= g.operator_norm_inf(8, 16)?.value;
        }
        best = best.max(prod);
    }
    Ok(best)
}

/// Fitted ratio of the deepest level, largest over axes. Large distances only
/// occur on fine levels, so this is the rate the point-mass envelope sees.
fn deepest_q_hat(f: &TensorFiltration, orders: &[usize]) -> Result<f64> {
    let mut q: f64 = 0.0;
    for (l, &k) in orders.iter().enumerate() {
        let g = GramSystem::new(SplineSpace1D::new(f.axis(l).level(f.depth())?.clone(), k)?)?;
        q = q.max(g.decay_profile(DEFAULT_SAMPLES_PER_ATOM)?.q_hat);
    }
    Ok(q)
}

/// `(d_n, |P_n delta_x0 (y)| |conv(A_n(x0) u A_n(y))|)` for every level and probe.
fn dirac_samples(f: &TensorFiltration, orders: &[usize], x0: &[f64], probes: &[Vec<f64>]) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = vec![];
    for n in 1..=f.depth() {
        let proj = TensorProjector::for_level(f, n, orders)?;
        let kernel = TensorSpline::new(proj.space().clone(), vec![proj.kernel_coefficients(x0)?])?;
        let (a0, _) = f.atom_of(n, x0)?;
        for y in probes {
            let (ay, _) = f.atom_of(n, y)?;
            let s = f.atom_distance(n, &a0, &ay)?;
            let v = kernel.eval(y)?[0].abs() * f.hull_volume(n, &a0, &ay)?;
            out.push((n, s, v));
        }
    }
    Ok(out)
}

fn dirac_bound(f: &TensorFiltration, theta: &HybridMeasure, dom: &Domination, y: &[f64]) -> Result<f64> {
    let n = f.depth();
    let (ay, _) = f.atom_of(n, y)?;
    let mut total = 0.0;
    for dirac in theta.diracs() {
        let (a0, _) = f.atom_of(n, &dirac.location)?;
        let s = f.atom_distance(n, &a0, &ay)?;
        total += euclidean_norm(&dirac.mass) * dom.c_k * dom.q_hat.powi(s as i32) / f.hull_volume(n, &a0, &ay)?;
    }
    Ok(total)
}

pub fn run(cfg: &Config) -> Result<Report> {
    let p = &cfg.singular;
    let seed = cfg.seed;
    let mut table = Table::new(&["dim", "order", "quantity", "level", "index", "value", "bound"]);
    let mut assertions = vec![];
    let mut findings = serde_json::Map::new();
    let mut worst_mart: f64 = 0.0;
    for &d in &p.dims {
        let depth = if d == 1 { p.depth_1d } else { p.depth_2d };
        let f = build_filtration(&FiltrationSpec::new(d, [0.0, 1.0], depth, p.rule.clone(), seed))?;
        let theta = if d == 1 { p.measure_1d.build(1)? } else { p.measure_2d.build(2)? };
        let probes = probe_points(&f, p.probes, seed ^ ((d as u64) << 40));
        let tv = theta.total_variation(&f, depth)?.exact;
        let witness: Vec<(f64, f64)> = (1..=depth).map(|n| theta.singular_witness(&f, n)).collect::<martspline::Result<_>>()?;
        findings.insert(format!("d{d}_singular_witness"), serde_json::json!(witness));
        for &k in &p.orders {
            let orders = vec![k; d];
            let tag = format!("d{d}_k{k}");
            let dom = domination_constants(&f, &orders, 1..=depth)?;
            let seq = make_sequence(&f, &Source::Measure { measure: theta.clone() }, &orders, depth)?;
            worst_mart = worst_mart.max(verify_martingale_property(&f, &seq, &probes[..p.martingale_probes.min(probes.len())])?);

            // density part: final errors within tol plus the point-mass tail
            let probe = convergence_probe(&seq, Reference::Function(theta.density()), &probes)?;
            let mut worst_final: f64 = 0.0;
            for (i, (y, errs)) in probes.iter().zip(&probe.errors).enumerate() {
                let allowance = p.tol + dirac_bound(&f, &theta, &dom, y)?;
                let e = *errs.last().unwrap();
                worst_final = worst_final.max(e / allowance);
                table.push([d.to_string(), k.to_string(), "final_error".into(), depth.to_string(), i.to_string(), e.to_string(), allowance.to_string()]);
            }
            assertions.push(Assertion::at_most(format!("converges_to_density_{tag}"), worst_final, 1.0));

            // point-mass part: per-distance envelope against C_k q_hat^s
            let mut envelope: Vec<f64> = vec![];
            let mut worst_env: f64 = 0.0;
            for dirac in theta.diracs() {
                for (_, s, v) in dirac_samples(&f, &orders, &dirac.location, &probes)? {
                    if envelope.len() <= s {
                        envelope.resize(s + 1, 0.0);
                    }
                    envelope[s] = envelope[s].max(v);
                    if v >= PROFILE_FLOOR {
                        worst_env = worst_env.max(v / (dom.c_k * dom.q_hat.powi(s as i32)));
                    }
                }
            }
            for (s, v) in envelope.iter().enumerate() {
                table.push([d.to_string(), k.to_string(), "dirac_envelope".into(), String::new(), s.to_string(), v.to_string(), (dom.c_k * dom.q_hat.powi(s as i32)).to_string()]);
            }
            assertions.push(Assertion::at_most(format!("dirac_below_envelope_{tag}"), worst_env, 1.0));
            let pts: Vec<(f64, f64)> = envelope
                .iter()
                .enumerate()
                .skip(k)
                .filter(|(_, &v)| v >= PROFILE_FLOOR)
                .map(|(s, &v)| (s as f64, v.ln()))
                .collect();
            let slope = least_squares_slope(&pts);
            let q_deep = deepest_q_hat(&f, &orders)?;
            let deviation_from = |q: f64| match slope {
                // k = 1: the kernel vanishes off the atom, nothing to fit
                None if q == 0.0 => 0.0,
                None => f64::INFINITY,
                Some(sl) => (sl / q.ln() - 1.0).abs(),
            };
            let deviation = deviation_from(q_deep);
            assertions.push(Assertion::at_most(format!("dirac_log_slope_{tag}"), deviation, p.slope_tol));

            let l1 = seq.l1_norms()?;
            let sup_l1 = l1.iter().copied().fold(0.0, f64::max);
            let shadrin = shadrin_constant(&f, &orders)?;
            assertions.push(Assertion::at_most(format!("l1_bounded_{tag}"), sup_l1, tv * shadrin));
            findings.insert(
                tag,
                serde_json::json!({
                    "q_hat": dom.q_hat,
                    "c_k": dom.c_k,
                    "fitted_slope": slope,
                    "ln_q_hat": if dom.q_hat > 0.0 { Some(dom.q_hat.ln()) } else { None },
                    "q_hat_deepest": q_deep,
                    "slope_deviation_from_deepest": deviation,
                    "slope_deviation_from_sup": deviation_from(dom.q_hat),
                    "l1_norms": l1,
                    "total_variation": tv,
                    "shadrin_constant": shadrin,
                }),
            );
        }
    }
    assertions.push(Assertion::at_most("martingale_property", worst_mart, p.martingale_tol));
    let mut rep = Report::new("singular", p, seed_list(seed, 1), table)?;
    rep.assertions = assertions;
    rep.findings = findings.into_iter().collect();
    Ok(rep)
}
