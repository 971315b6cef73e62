//! Martingale spline sequences `P_n g_{n+1} = g_n` and pointwise
//! convergence probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bspline::{SplineSpace1D, TensorSpline};
use crate::error::{Error, Result};
use crate::filtration::TensorFiltration;
use crate::measures::{euclidean_norm, Density, HybridMeasure};
use crate::projector::{QuadratureSpec, TensorProjector};
use crate::quadrature::{GaussLegendre, NONPOLY_POINTS};

/// Probe points closer than this to a breakpoint are rejected.
pub const PROBE_GAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    Function { density: Density },
    Measure { measure: HybridMeasure },
}

impl Source {
    pub fn value_dim(&self) -> usize {
        match self {
            Source::Function { density } => density.value_dim(),
            Source::Measure { measure } => measure.value_dim(),
        }
    }
}

/// `g_1, ..., g_N` on the levels of one filtration.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleSplineSequence {
    orders: Vec<usize>,
    value_dim: usize,
    quad_points: usize,
    splines: Vec<TensorSpline>,
}

impl MartingaleSplineSequence {
    /// Wraps given splines (level `n` at position `n - 1`) without checks;
    /// [`verify_martingale_property`] measures how far they are from being
    /// a martingale spline sequence.
    pub fn from_splines(splines: Vec<TensorSpline>) -> Result<Self> {
        let first = splines
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty sequence".into()))?;
        Ok(Self {
            orders: first.space().orders(),
            value_dim: first.value_dim(),
            quad_points: 0,
            splines,
        })
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    /// Gauss points per finest atom used to load the source.
    pub fn quad_points(&self) -> usize {
        self.quad_points
    }

    pub fn len(&self) -> usize {
        self.splines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splines.is_empty()
    }

    pub fn splines(&self) -> &[TensorSpline] {
        &self.splines
    }

    /// `g_n`, `n` 1-based.
    pub fn level(&self, n: usize) -> Result<&TensorSpline> {
        self.splines.get(n.wrapping_sub(1)).ok_or(Error::LevelOutOfRange {
            level: n,
            depth: self.splines.len(),
        })
    }

    pub fn into_splines(self) -> Vec<TensorSpline> {
        self.splines
    }

    /// `int ||g_n||` per level, by 16-point Gauss rules on each atom.
    pub fn l1_norms(&self) -> Result<Vec<f64>> {
        self.splines.iter().map(l1_norm).collect()
    }
}

/// Gauss nodes on every atom of one axis with the active basis values.
struct AxisRule {
    w: Vec<f64>,
    first: Vec<usize>,
    vals: Vec<f64>,
    k: usize,
}

impl AxisRule {
    fn new(sp: &SplineSpace1D, rule: &GaussLegendre) -> Self {
        let k = sp.order();
        let p = sp.partition();
        let mut out = Self {
            w: vec![],
            first: vec![],
            vals: vec![],
            k,
        };
        let mut buf = vec![0.0; k];
        for j in 0..p.num_atoms() {
            let a = p.atom(j);
            for (x, w) in rule.mapped(a.lo, a.hi) {
                sp.basis_on_atom(j, x, &mut buf);
                out.w.push(w);
                out.first.push(j);
                out.vals.extend_from_slice(&buf);
            }
        }
        out
    }
}

/// `sum_nodes w ||s(node)||` with the leading axis contracted one node at a
/// time, so only one slab of the remaining axes is held in memory.
fn l1_contract(coeffs: &[Vec<f64>], shape: &[usize], axes: &[AxisRule]) -> f64 {
    let (ax, rest) = axes.split_first().expect("at least one axis");
    let k = ax.k;
    let mut sum = 0.0;
    if rest.is_empty() {
        for (i, &w) in ax.w.iter().enumerate() {
            let (first, vals) = (ax.first[i], &ax.vals[i * k..(i + 1) * k]);
            let sq: f64 = coeffs
                .iter()
                .map(|c| {
                    let v: f64 = vals.iter().zip(&c[first..first + k]).map(|(b, x)| b * x).sum();
                    v * v
                })
                .sum();
            sum += w * sq.sqrt();
        }
        return sum;
    }
    let stride: usize = shape[1..].iter().product();
    let mut slab = vec![vec![0.0; stride]; coeffs.len()];
    for (i, &w) in ax.w.iter().enumerate() {
        let (first, vals) = (ax.first[i], &ax.vals[i * k..(i + 1) * k]);
        for (out, c) in slab.iter_mut().zip(coeffs) {
            out.fill(0.0);
            for (r, v) in vals.iter().enumerate() {
                let row = &c[(first + r) * stride..(first + r + 1) * stride];
                for (o, x) in out.iter_mut().zip(row) {
                    *o += v * x;
                }
            }
        }
        sum += w * l1_contract(&slab, &shape[1..], rest);
    }
    sum
}

/// `int ||s||` over the domain, atom by atom.
pub fn l1_norm(s: &TensorSpline) -> Result<f64> {
    let rule = GaussLegendre::new(NONPOLY_POINTS)?;
    let axes: Vec<AxisRule> = s.space().spaces().iter().map(|sp| AxisRule::new(sp, &rule)).collect();
    Ok(l1_contract(s.coeffs(), &s.space().shape(), &axes))
}

/// Builds `g_n = P_n source` for `n = 1..=n_max`. The source is integrated
/// once against the level-`n_max` basis; coarser loads follow from the
/// two-scale relation, so every level sees the same quadrature and the
/// martingale property holds up to roundoff.
pub fn make_sequence(
    f: &TensorFiltration,
    source: &Source,
    orders: &[usize],
    n_max: usize,
) -> Result<MartingaleSplineSequence> {
    f.check_level(n_max)?;
    if orders.contains(&0) {
        return Err(Error::InvalidOrder(0));
    }
    let kmax = orders.iter().copied().max().unwrap_or(1);
    let finest = TensorProjector::for_level(f, n_max, orders)?;
    let (loads, quad_points) = match source {
        Source::Function { density } => {
            if density.value_dim() == 0 {
                return Err(Error::InvalidParameter("empty density".into()));
            }
            let g = density.quadrature_points(kmax);
            let fun = |x: &[f64], out: &mut [f64]| density.eval(x, out);
            (
                finest.load_function(&fun, density.value_dim(), &QuadratureSpec::points(g))?,
                g,
            )
        }
        Source::Measure { measure } => {
            measure.check_inside(f)?;
            let g = measure.projection_quad_points(kmax);
            (finest.load_measure(measure, &QuadratureSpec::points(g))?, g)
        }
    };
    let mut splines = Vec::with_capacity(n_max);
    for n in 1..n_max {
        let proj = TensorProjector::for_level(f, n, orders)?;
        let mut b = loads
            .iter()
            .map(|c| proj.restrict_loads(&finest, c))
            .collect::<Result<Vec<_>>>()?;
        for c in b.iter_mut() {
            proj.solve_tensor(c);
        }
        splines.push(TensorSpline::new(proj.space().clone(), b)?);
    }
    let mut b = loads;
    for c in b.iter_mut() {
        finest.solve_tensor(c);
    }
    splines.push(TensorSpline::new(finest.space().clone(), b)?);
    Ok(MartingaleSplineSequence {
        orders: orders.to_vec(),
        value_dim: source.value_dim(),
        quad_points,
        splines,
    })
}

/// `max_n max_y ||P_n g_{n+1}(y) - g_n(y)||`, with `P_n g_{n+1}` recomputed
/// by direct quadrature on the level-`n+1` atoms.
pub fn verify_martingale_property(
    f: &TensorFiltration,
    seq: &MartingaleSplineSequence,
    probes: &[Vec<f64>],
) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::InvalidParameter("sequence needs at least two levels".into()));
    }
    let mut worst: f64 = 0.0;
    for n in 1..seq.len() {
        let proj = TensorProjector::for_level(f, n, seq.orders())?;
        let h = proj.project_spline(seq.level(n + 1)?)?;
        let g = seq.level(n)?;
        for y in probes {
            let a = h.eval(y)?;
            let b = g.eval(y)?;
            let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
            worst = worst.max(euclidean_norm(&diff));
        }
    }
    Ok(worst)
}

/// Uniform points in the domain, rejected when within [`PROBE_GAP`]
/// (relative to the domain) of a breakpoint of the deepest level.
pub fn probe_points(f: &TensorFiltration, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<_> = f.axes().iter().map(|a| a.levels().last().expect("depth >= 1")).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let y: Vec<f64> = parts
            .iter()
            .map(|p| {
                let d = p.domain();
                d.lo + d.width() * rng.gen::<f64>()
            })
            .collect();
        let clear = parts.iter().zip(&y).all(|(p, &v)| {
            let bp = p.breakpoints();
            let gap = PROBE_GAP * p.domain().width();
            let j = bp.partition_point(|&b| b < v);
            let near_lo = j > 0 && v - bp[j - 1] < gap;
            let near_hi = j < bp.len() && bp[j] - v < gap;
            !(near_lo || near_hi)
        });
        if clear {
            out.push(y);
        }
    }
    out
}

pub enum Reference<'a> {
    Function(&'a Density),
    /// The last spline of the sequence.
    Deepest,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceProbe {
    pub points: Vec<Vec<f64>>,
    /// `errors[p][n - 1] = ||g_n(y_p) - g_ref(y_p)||`.
    pub errors: Vec<Vec<f64>>,
}

impl ConvergenceProbe {
    pub fn final_errors(&self) -> Vec<f64> {
        self.errors.iter().map(|e| *e.last().unwrap_or(&f64::NAN)).collect()
    }

    /// Share of points whose error at level `n` is below `tol`.
    pub fn fraction_below(&self, n: usize, tol: f64) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        let hits = self.errors.iter().filter(|e| e[n - 1] < tol).count();
        hits as f64 / self.errors.len() as f64
    }

    /// Median over points of the least-squares slope of `ln error` per level
    /// over the second half of the levels (errors at roundoff ignored).
    pub fn median_log_rate(&self) -> Option<f64> {
        let mut rates: Vec<f64> = self
            .errors
            .iter()
            .filter_map(|e| {
                let from = e.len() / 2;
                let pts: Vec<(f64, f64)> = e
                    .iter()
                    .enumerate()
                    .skip(from)
                    .filter(|(_, &v)| v > 1e-14)
                    .map(|(i, &v)| (i as f64, v.ln()))
                    .collect();
                least_squares_slope(&pts)
            })
            .collect();
        if rates.is_empty() {
            return None;
        }
        rates.sort_by(f64::total_cmp);
        Some(rates[rates.len() / 2])
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Error trajectories of a sequence at probe points.
pub fn convergence_probe(
    seq: &MartingaleSplineSequence,
    reference: Reference,
    points: &[Vec<f64>],
) -> Result<ConvergenceProbe> {
    let last = seq.level(seq.len())?;
    let mut errors = Vec::with_capacity(points.len());
    for y in points {
        let want = match &reference {
            Reference::Function(d) => d.eval_vec(y),
            Reference::Deepest => last.eval(y)?,
        };
        if want.len() != seq.value_dim() {
            return Err(Error::DimensionMismatch {
                expected: seq.value_dim(),
                found: want.len(),
            });
        }
        let row = seq
            .splines()
            .iter()
            .map(|g| {
                let v = g.eval(y)?;
                let diff: Vec<f64> = v.iter().zip(&want).map(|(a, b)| a - b).collect();
                Ok(euclidean_norm(&diff))
            })
            .collect::<Result<Vec<_>>>()?;
        errors.push(row);
    }
    Ok(ConvergenceProbe {
        points: points.to_vec(),
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::{build_filtration, FiltrationSpec, RefinementRule};
    use crate::measures::Monomial;

    fn pointwise_l1(s: &TensorSpline) -> f64 {
        let rule = GaussLegendre::new(NONPOLY_POINTS).unwrap();
        let nodes: Vec<Vec<(f64, f64)>> = s
            .space()
            .spaces()
            .iter()
            .map(|sp| {
                let p = sp.partition();
                (0..p.num_atoms()).flat_map(|j| rule.mapped(p.atom(j).lo, p.atom(j).hi).collect::<Vec<_>>()).collect()
            })
            .collect();
        let mut sum = 0.0;
        for &(x, wx) in &nodes[0] {
            for &(y, wy) in &nodes[1] {
                sum += wx * wy * euclidean_norm(&s.eval(&[x, y]).unwrap());
            }
        }
        sum
    }

    #[test]
    fn l1_norm_of_constants_and_against_pointwise_sum() {
        let f = build_filtration(&FiltrationSpec::new(2, [0.0, 1.0], 4, RefinementRule::UniformBisectAll, 3)).unwrap();
        let proj = TensorProjector::for_level(&f, 3, &[2, 3]).unwrap();
        let space = proj.space().clone();
        let n = space.len();
        let flat = TensorSpline::new(space.clone(), vec![vec![3.0; n], vec![4.0; n]]).unwrap();
        assert!((l1_norm(&flat).unwrap() - 5.0).abs() < 1e-12);

        let mut r = ChaCha8Rng::seed_from_u64(9);
        let wild = TensorSpline::new(
            space,
            vec![(0..n).map(|_| r.gen_range(-1.0..1.0)).collect(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()],
        )
        .unwrap();
        let want = pointwise_l1(&wild);
        assert!((l1_norm(&wild).unwrap() - want).abs() < 1e-12 * want.max(1.0));
    }

    #[test]
    fn spline_source_is_reproduced() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 5)).unwrap();
        // x^2 lies in S_3 of every level
        let src = Source::Function {
            density: Density::Polynomial {
                terms: vec![Monomial { coef: 1.0, powers: vec![2] }],
            },
        };
        let seq = make_sequence(&f, &src, &[3], 5).unwrap();
        for g in seq.splines() {
            for y in [0.1, 0.37, 0.92] {
                assert!((g.eval(&[y]).unwrap()[0] - y * y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirac_sequence_k1() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 6)).unwrap();
        let src = Source::Measure {
            measure: HybridMeasure::point_mass(vec![0.3], 1.0).unwrap(),
        };
        let seq = make_sequence(&f, &src, &[1], 6).unwrap();
        for (i, g) in seq.splines().iter().enumerate() {
            let n = i + 1;
            let h = 0.5f64.powi(n as i32);
            assert!((g.eval(&[0.3]).unwrap()[0] - 1.0 / h).abs() < 1e-9);
            let far = if 0.3 < 0.5 { 0.9 } else { 0.1 };
            assert!(g.eval(&[far]).unwrap()[0].abs() < 1e-12);
        }
        for v in seq.l1_norms().unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let probes = probe_points(&f, 50, 3);
        assert!(verify_martingale_property(&f, &seq, &probes).unwrap() < 1e-12);
    }

    #[test]
    fn levels_match_direct_projection() {
        let spec = FiltrationSpec::new(
            2,
            [0.0, 1.0],
            3,
            RefinementRule::RandomAtomBisect {
                split_prob: 0.8,
                jitter: 0.2,
            },
            5,
        );
        let f = build_filtration(&spec).unwrap();
        let dens = Density::TensorCosine {
            freq: vec![2.0, 3.0],
            phase: vec![0.1, 0.0],
            scale: 1.0,
        };
        let seq = make_sequence(&f, &Source::Function { density: dens.clone() }, &[2, 3], 3).unwrap();
        let probes = probe_points(&f, 30, 1);
        for n in 1..=3 {
            let proj = TensorProjector::for_level(&f, n, &[2, 3]).unwrap();
            let fun = |x: &[f64], out: &mut [f64]| dens.eval(x, out);
            let direct = proj.project_function(&fun, 1, &QuadratureSpec::nonpolynomial()).unwrap();
            for y in &probes {
                let a = direct.eval(y).unwrap()[0];
                let b = seq.level(n).unwrap().eval(y).unwrap()[0];
                assert!((a - b).abs() < 1e-12, "{a} {b}");
            }
        }
        assert!(verify_martingale_property(&f, &seq, &probes).unwrap() < 1e-11);
    }

    #[test]
    fn corrupted_sequence_is_detected() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 4)).unwrap();
        let src = Source::Function {
            density: Density::Gaussian {
                center: vec![0.4],
                width: 0.2,
                scale: 1.0,
            },
        };
        let seq = make_sequence(&f, &src, &[3], 4).unwrap();
        let probes = probe_points(&f, 200, 9);
        assert!(verify_martingale_property(&f, &seq, &probes).unwrap() < 1e-12);
        let mut splines = seq.into_splines();
        splines[2].coeffs_mut()[0][4] += 1e-3;
        let bad = MartingaleSplineSequence::from_splines(splines).unwrap();
        assert!(verify_martingale_property(&f, &bad, &probes).unwrap() >= 1e-4);
    }

    #[test]
    fn probes_avoid_breakpoints() {
        let f = build_filtration(&FiltrationSpec::dyadic(2, 4)).unwrap();
        let pts = probe_points(&f, 100, 7);
        assert_eq!(pts.len(), 100);
        for y in &pts {
            for v in y {
                let scaled = v * 16.0;
                assert!((scaled - scaled.round()).abs() > 16.0 * PROBE_GAP);
            }
        }
        assert_eq!(pts, probe_points(&f, 100, 7));
    }

    #[test]
    fn smooth_function_converges() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 8)).unwrap();
        let dens = Density::TensorCosine {
            freq: vec![5.0],
            phase: vec![0.3],
            scale: 1.0,
        };
        let seq = make_sequence(&f, &Source::Function { density: dens.clone() }, &[2], 8).unwrap();
        let probe = convergence_probe(&seq, Reference::Function(&dens), &probe_points(&f, 40, 2)).unwrap();
        assert_eq!(probe.fraction_below(8, 1e-3), 1.0);
        assert!(probe.median_log_rate().unwrap() < -1.0);
    }
}
