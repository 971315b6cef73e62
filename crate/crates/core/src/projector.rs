//! Gram systems, dual B-splines and the orthogonal projector onto tensor
//! spline spaces.
//!
//! The tensor Gram matrix `G_1 (x) ... (x) G_d` is never assembled; solves are
//! applied mode by mode with the per-axis banded Cholesky factors.

use rayon::prelude::*;
use serde::Serialize;

use crate::banded::{BandedCholesky, SymBanded};
use crate::bspline::{SplineSpace1D, TensorSpace, TensorSpline, MAX_ORDER};
use crate::error::{Error, Result};
use crate::filtration::{Partition1D, TensorFiltration};
use crate::measures::HybridMeasure;
use crate::quadrature::{GaussLegendre, NONPOLY_POINTS};

/// Chebyshev sampling density used for sup estimates.
pub const DEFAULT_SAMPLES_PER_ATOM: usize = 8;

/// Profile values below this are treated as roundoff and left out of fits.
pub const PROFILE_FLOOR: f64 = 1e-14;

const NORM_CHUNK: usize = 64;

/// Banded Gram matrix `G_ij = int N_i N_j` of one spline space with its
/// Cholesky factor.
#[derive(Clone, Debug)]
pub struct GramSystem {
    space: SplineSpace1D,
    matrix: SymBanded,
    chol: BandedCholesky,
}

pub fn gram(space: &SplineSpace1D) -> Result<GramSystem> {
    GramSystem::new(space.clone())
}

impl GramSystem {
    pub fn new(space: SplineSpace1D) -> Result<Self> {
        let k = space.order();
        // k Gauss points are exact for the degree 2k-2 products
        let rule = GaussLegendre::new(k)?;
        let mut matrix = SymBanded::zeros(space.dim(), k - 1);
        let mut vals = [0.0; MAX_ORDER];
        for j in 0..space.num_atoms() {
            let a = space.partition().atom(j);
            for (x, w) in rule.mapped(a.lo, a.hi) {
                space.basis_on_atom(j, x, &mut vals);
                for r in 0..k {
                    for c in 0..=r {
                        matrix.add(j + r, j + c, w * vals[r] * vals[c]);
                    }
                }
            }
        }
        let chol = matrix.cholesky()?;
        Ok(Self { space, matrix, chol })
    }

    pub fn space(&self) -> &SplineSpace1D {
        &self.space
    }

    pub fn matrix(&self) -> &SymBanded {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(b)
    }

    pub fn cholesky(&self) -> &BandedCholesky {
        &self.chol
    }

    /// Coefficients of `N*_i` in the B-spline basis: row `i` of `G^{-1}`.
    pub fn dual_coefficients(&self, i: usize) -> Result<Vec<f64>> {
        self.space.check_index(i)?;
        let mut e = vec![0.0; self.dim()];
        e[i] = 1.0;
        self.chol.solve_in_place(&mut e);
        Ok(e)
    }

    /// `N*_i(x)` by one banded solve.
    pub fn dual_eval(&self, i: usize, x: f64) -> Result<f64> {
        let c = self.dual_coefficients(i)?;
        self.space.eval_spline(&c, x)
    }

    /// `L^1 -> L^1` (equivalently `L^inf -> L^inf`) norm of the projector,
    /// estimated as the sup over a per-atom Chebyshev grid of
    /// `int |K(x, y)| dy` with `K(x, y) = sum_i N_i(y) N*_i(x)`.
    pub fn operator_norm_inf(&self, samples_per_atom: usize, quad_points: usize) -> Result<OperatorNorm> {
        if samples_per_atom == 0 {
            return Err(Error::InvalidParameter("need at least one sample per atom".into()));
        }
        let rule = GaussLegendre::new(quad_points)?;
        let space = &self.space;
        let k = space.order();
        let atoms = space.num_atoms();
        let cheb = chebyshev_fractions(samples_per_atom);
        let chunks: Vec<(usize, usize)> = (0..atoms)
            .step_by(NORM_CHUNK)
            .map(|a0| (a0, (a0 + NORM_CHUNK).min(atoms)))
            .collect();
        let per_chunk: Vec<Vec<(f64, f64)>> = chunks
            .into_par_iter()
            .map(|(a0, a1)| {
                let (w0, cols) = self.local_columns(a0, a1 + k - 1);
                let width = cols[0].len();
                let nodes = WindowNodes::new(space, w0, w0 + width, &rule);
                let mut out = Vec::with_capacity(a1 - a0);
                let mut vals = [0.0; MAX_ORDER];
                let mut a = vec![0.0; width];
                for j in a0..a1 {
                    let atom = space.partition().atom(j);
                    let mut best = (0.0, atom.lo);
                    for &t in &cheb {
                        let x = atom.lo + t * atom.width();
                        space.basis_on_atom(j, x, &mut vals);
                        a.iter_mut().for_each(|v| *v = 0.0);
                        for r in 0..k {
                            for (ai, ci) in a.iter_mut().zip(&cols[j + r - a0]) {
                                *ai += vals[r] * ci;
                            }
                        }
                        let v = nodes.abs_integral(&a, w0);
                        if v > best.0 {
                            best = (v, x);
                        }
                    }
                    out.push(best);
                }
                out
            })
            .collect();
        let per_atom = per_chunk.into_iter().flatten();
        let (value, argmax) = per_atom
            .into_iter()
            .fold((0.0, f64::NAN), |acc, v| if v.0 > acc.0 { v } else { acc });
        Ok(OperatorNorm {
            value,
            argmax: vec![argmax],
            samples_per_atom,
            quad_points,
        })
    }

    /// Columns `i0..i1` of the inverse Gram matrix, restricted to a window of
    /// function indices starting at the returned offset. The window grows
    /// until every column is below roundoff at both window edges, so the
    /// truncation error is at the level of the floating-point solve itself.
    fn local_columns(&self, i0: usize, i1: usize) -> (usize, Vec<Vec<f64>>) {
        let n = self.dim();
        let bw = self.matrix.bandwidth();
        let mut pad = 32usize;
        loop {
            let w0 = i0.saturating_sub(pad);
            let w1 = (i1 + pad).min(n);
            if w0 == 0 && w1 == n {
                let cols = (i0..i1).map(|i| self.dual_coefficients(i).expect("index in range")).collect();
                return (0, cols);
            }
            let m = w1 - w0;
            let mut local = SymBanded::zeros(m, bw);
            for i in 0..m {
                for j in i.saturating_sub(bw)..=i {
                    local.add(i, j, self.matrix.get(w0 + i, w0 + j));
                }
            }
            let chol = local.cholesky().expect("principal submatrix of a positive definite matrix");
            let cols: Vec<Vec<f64>> = (i0..i1)
                .map(|i| {
                    let mut e = vec![0.0; m];
                    e[i - w0] = 1.0;
                    chol.solve_in_place(&mut e);
                    e
                })
                .collect();
            let edge_ok = cols.iter().all(|c| {
                let peak = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                let lo_ok = w0 == 0 || c[..=bw.min(m - 1)].iter().all(|v| v.abs() <= 1e-18 * peak);
                let hi_ok = w1 == n || c[m - 1 - bw.min(m - 1)..].iter().all(|v| v.abs() <= 1e-18 * peak);
                lo_ok && hi_ok
            });
            if edge_ok {
                return (w0, cols);
            }
            pad *= 2;
        }
    }

    /// Per-distance maxima of `|N*_i(x)| |conv(E_i u A(x))|`; the maximum over
    /// each atom is located by sampling and then polished.
    pub fn decay_profile(&self, samples_per_atom: usize) -> Result<DecayProfile> {
        let k = self.space.order();
        if self.space.dim() < 2 * k {
            return Err(Error::SpaceTooSmall {
                dim: self.space.dim(),
                required: 2 * k,
            });
        }
        Ok(DecayProfile::fit(k, self.profile_values(samples_per_atom), samples_per_atom))
    }

    /// Raw profile `values[s]` without a fit; defined for every space size.
    pub fn profile_values(&self, samples_per_atom: usize) -> Vec<f64> {
        let space = &self.space;
        let part = space.partition();
        let atoms = space.num_atoms();
        let mut fracs = vec![0.0];
        fracs.extend(chebyshev_fractions(samples_per_atom));
        fracs.push(1.0);
        let rows: Vec<Vec<f64>> = (0..space.dim())
            .into_par_iter()
            .map(|i| {
                let c = self.dual_coefficients(i).expect("index in range");
                let (lo, hi) = space.support_atoms(i).expect("index in range");
                let mut prof = vec![0.0; atoms];
                for j in 0..atoms {
                    let s = if j < lo { lo - j } else { j.saturating_sub(hi) };
                    let hull = part.hull_width(lo.min(j), hi.max(j));
                    let m = abs_max_on_atom(space, &c, j, &fracs);
                    prof[s] = f64::max(prof[s], m * hull);
                }
                prof
            })
            .collect();
        let mut values = vec![0.0; atoms];
        for r in &rows {
            for (v, p) in values.iter_mut().zip(r) {
                *v = f64::max(*v, *p);
            }
        }
        while values.len() > 1 && *values.last().unwrap() == 0.0 {
            values.pop();
        }
        values
    }

    /// `max_{i,j} |int N_i N*_j - delta_ij|`, with the duals evaluated
    /// pointwise and integrated by Gauss rules (independent of the Gram
    /// assembly).
    pub fn biorthogonality_error(&self) -> Result<f64> {
        let space = &self.space;
        let k = space.order();
        let rule = GaussLegendre::new(k)?;
        let errs: Vec<f64> = (0..space.dim())
            .into_par_iter()
            .map(|j| {
                let c = self.dual_coefficients(j).expect("index in range");
                let mut vals = [0.0; MAX_ORDER];
                let mut row = vec![0.0; space.dim()];
                for a in 0..space.num_atoms() {
                    let atom = space.partition().atom(a);
                    for (x, w) in rule.mapped(atom.lo, atom.hi) {
                        space.basis_on_atom(a, x, &mut vals);
                        let dual = space.eval_on_atom(&c, a, x);
                        for r in 0..k {
                            row[a + r] += w * vals[r] * dual;
                        }
                    }
                }
                row.iter()
                    .enumerate()
                    .map(|(i, v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(errs.into_iter().fold(0.0, f64::max))
    }
}

/// Two-scale relation between nested spaces of equal order: row `i` holds
/// the coefficients of the coarse `N_i` in the fine basis as
/// `(first fine index, values)`. Computed by projecting `N_i` onto the fine
/// space, which reproduces it exactly.
pub fn refinement_matrix(coarse: &SplineSpace1D, fine: &GramSystem) -> Result<Vec<(usize, Vec<f64>)>> {
    let fs = fine.space();
    let k = coarse.order();
    if fs.order() != k {
        return Err(Error::InvalidParameter(format!(
            "orders differ: {k} vs {}",
            fs.order()
        )));
    }
    let parents = coarse.partition().parent_map(fs.partition());
    let rule = GaussLegendre::new(k)?;
    let nf = fs.num_atoms();
    let mut rows = Vec::with_capacity(coarse.dim());
    let mut cv = [0.0; MAX_ORDER];
    let mut fv = [0.0; MAX_ORDER];
    let mut first_fine = vec![usize::MAX; coarse.num_atoms()];
    let mut last_fine = vec![0; coarse.num_atoms()];
    for (fa, &ca) in parents.iter().enumerate() {
        first_fine[ca] = first_fine[ca].min(fa);
        last_fine[ca] = last_fine[ca].max(fa);
    }
    for i in 0..coarse.dim() {
        let (clo, chi) = coarse.support_atoms(i)?;
        let (fa_lo, fa_hi) = (first_fine[clo], last_fine[chi]);
        if fa_lo == usize::MAX {
            return Err(Error::InvalidParameter("fine partition does not refine the coarse one".into()));
        }
        let mut rhs = vec![0.0; fs.dim()];
        for fa in fa_lo..=fa_hi {
            let atom = fs.partition().atom(fa);
            for (x, w) in rule.mapped(atom.lo, atom.hi) {
                let ca = parents[fa];
                coarse.basis_on_atom(ca, x, &mut cv);
                fs.basis_on_atom(fa, x, &mut fv);
                let ci = if i >= ca && i < ca + k { cv[i - ca] } else { 0.0 };
                for r in 0..k {
                    rhs[fa + r] += w * ci * fv[r];
                }
            }
        }
        fine.cholesky().solve_in_place(&mut rhs);
        // fine functions supported inside supp N_i
        let j_lo = if fa_lo == 0 { 0 } else { fa_lo + k - 1 };
        let j_hi = if fa_hi == nf - 1 { fs.dim() - 1 } else { fa_hi };
        rows.push((j_lo, rhs[j_lo..=j_hi].to_vec()));
    }
    Ok(rows)
}

/// Applies sparse rows along one axis of a row-major array.
fn apply_rows(data: &[f64], shape: &[usize], axis: usize, rows: &[(usize, Vec<f64>)]) -> Vec<f64> {
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer = data.len() / (n * stride);
    let m = rows.len();
    let mut out = vec![0.0; outer * m * stride];
    for o in 0..outer {
        for inner in 0..stride {
            let src = o * n * stride + inner;
            let dst = o * m * stride + inner;
            for (i, (first, vals)) in rows.iter().enumerate() {
                out[dst + i * stride] = vals
                    .iter()
                    .enumerate()
                    .map(|(r, v)| v * data[src + (first + r) * stride])
                    .sum();
            }
        }
    }
    out
}

/// `max |s|` over atom `j` for the spline with coefficients `c`: the best of
/// the sorted sample fractions `fracs` (which include both ends), polished by
/// a golden-section search between its neighbours.
fn abs_max_on_atom(space: &SplineSpace1D, c: &[f64], j: usize, fracs: &[f64]) -> f64 {
    let a = space.partition().atom(j);
    let at = |t: f64| space.eval_on_atom(c, j, a.lo + t * a.width()).abs();
    let (best, mut m) = fracs
        .iter()
        .enumerate()
        .map(|(r, &t)| (r, at(t)))
        .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    if m == 0.0 {
        return 0.0;
    }
    let mut lo = fracs[best.saturating_sub(1)];
    let mut hi = fracs[(best + 1).min(fracs.len() - 1)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (at(x1), at(x2));
    for _ in 0..40 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = at(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = at(x1);
        }
        m = m.max(f1).max(f2);
    }
    m
}

/// Fractions in `(0, 1)` of the Chebyshev points of the first kind.
pub fn chebyshev_fractions(s: usize) -> Vec<f64> {
    (0..s)
        .map(|r| 0.5 - 0.5 * ((2 * r + 1) as f64 * std::f64::consts::PI / (2 * s) as f64).cos())
        .collect()
}

/// Gauss nodes on the atoms meeting the coefficient window `w0..w1`, with
/// the active basis values cached for repeated integrals.
struct WindowNodes {
    j0: usize,
    j1: usize,
    k: usize,
    g: usize,
    w: Vec<f64>,
    vals: Vec<f64>,
}

impl WindowNodes {
    fn new(space: &SplineSpace1D, w0: usize, w1: usize, rule: &GaussLegendre) -> Self {
        let k = space.order();
        // atom j carries functions j..j+k
        let j0 = w0.saturating_sub(k - 1);
        let j1 = w1.min(space.num_atoms());
        let mut out = Self {
            j0,
            j1,
            k,
            g: rule.len(),
            w: vec![],
            vals: vec![],
        };
        let mut buf = [0.0; MAX_ORDER];
        for j in j0..j1 {
            let atom = space.partition().atom(j);
            for (x, w) in rule.mapped(atom.lo, atom.hi) {
                space.basis_on_atom(j, x, &mut buf);
                out.w.push(w);
                out.vals.extend_from_slice(&buf[..k]);
            }
        }
        out
    }

    /// `int |sum_i a_i N_i|` where `a` holds coefficients `w0..w0 + a.len()`;
    /// atoms whose active coefficients are all negligible are skipped.
    fn abs_integral(&self, a: &[f64], w0: usize) -> f64 {
        let (k, g) = (self.k, self.g);
        let w1 = w0 + a.len();
        let tiny = a.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-18;
        let mut total = 0.0;
        let mut coef = [0.0; MAX_ORDER];
        for j in self.j0..self.j1 {
            for (r, c) in coef[..k].iter_mut().enumerate() {
                let i = j + r;
                *c = if i < w0 || i >= w1 { 0.0 } else { a[i - w0] };
            }
            if coef[..k].iter().all(|c| c.abs() <= tiny) {
                continue;
            }
            let base = (j - self.j0) * g;
            for p in base..base + g {
                let v: f64 = self.vals[p * k..(p + 1) * k].iter().zip(&coef[..k]).map(|(b, c)| c * b).sum();
                total += self.w[p] * v.abs();
            }
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorNorm {
    /// Lower bound for the operator norm (sampled sup).
    pub value: f64,
    pub argmax: Vec<f64>,
    pub samples_per_atom: usize,
    pub quad_points: usize,
}

/// Decay of dual B-splines with fitted `q_hat`, `C_hat`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayProfile {
    pub k: usize,
    /// `values[s]`: max over sampled `x` and `i` with `d(E_i, A(x)) = s`.
    pub values: Vec<f64>,
    /// Ratio from the log-linear least-squares fit over `s >= 1`.
    pub q_hat: f64,
    /// Envelope constant: `max_s values[s] / q_hat^s`.
    pub c_hat: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    /// Number of distances entering the fit.
    pub fitted_points: usize,
    pub samples_per_atom: usize,
}

impl DecayProfile {
    pub fn fit(k: usize, values: Vec<f64>, samples_per_atom: usize) -> Self {
        let pts: Vec<(f64, f64)> = values
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &v)| v >= PROFILE_FLOOR)
            .map(|(s, &v)| (s as f64, v.ln()))
            .collect();
        let (q_hat, residual) = if pts.len() < 2 {
            (0.0, 0.0)
        } else {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let slope = sxy / sxx;
            let icpt = my - slope * mx;
            let rss: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
            (slope.exp(), (rss / n).sqrt())
        };
        let c_hat = values
            .iter()
            .enumerate()
            .filter(|(s, &v)| *s == 0 || (q_hat > 0.0 && v >= PROFILE_FLOOR))
            .map(|(s, &v)| v / q_hat.powi(s as i32))
            .fold(0.0, f64::max);
        Self {
            k,
            values,
            q_hat,
            c_hat,
            residual,
            fitted_points: pts.len(),
            samples_per_atom,
        }
    }

    /// Smallest `C` with `values[s] <= C q^s` for every entry above the
    /// roundoff floor (and `s = 0`).
    pub fn envelope_constant(values: &[f64], q: f64) -> f64 {
        values
            .iter()
            .enumerate()
            .filter(|(s, &v)| *s == 0 || v >= PROFILE_FLOOR)
            .map(|(s, &v)| {
                if q == 0.0 && s > 0 {
                    f64::INFINITY
                } else {
                    v / q.powi(s as i32)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `C_hat q_hat^s`.
    pub fn envelope(&self, s: usize) -> f64 {
        self.c_hat * self.q_hat.powi(s as i32)
    }

    /// Whether the profile is nonincreasing from distance `from` on, among
    /// entries above the roundoff floor.
    pub fn nonincreasing_from(&self, from: usize) -> bool {
        let v: Vec<f64> = self
            .values
            .iter()
            .skip(from)
            .copied()
            .take_while(|&v| v >= PROFILE_FLOOR)
            .collect();
        v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }
}

/// Orthogonal projector onto a tensor spline space.
#[derive(Clone, Debug)]
pub struct TensorProjector {
    space: TensorSpace,
    grams: Vec<GramSystem>,
}

/// Quadrature used to load right-hand sides.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureSpec<'a> {
    /// Points per atom per axis.
    pub points: usize,
    /// Per-axis partitions to integrate over; defaults to the projector's
    /// own. Must refine the projector's partitions.
    pub partitions: Option<Vec<&'a Partition1D>>,
}

impl QuadratureSpec<'_> {
    pub fn points(points: usize) -> Self {
        Self {
            points,
            partitions: None,
        }
    }

    /// Fixed rule for integrands that are not piecewise polynomials.
    pub fn nonpolynomial() -> Self {
        Self::points(NONPOLY_POINTS)
    }
}

impl TensorProjector {
    pub fn new(space: TensorSpace) -> Result<Self> {
        let grams = space
            .spaces()
            .iter()
            .map(|s| GramSystem::new(s.clone()))
            .collect::<Result<_>>()?;
        Ok(Self { space, grams })
    }

    /// Projector onto `S_n` of a filtration with per-axis orders.
    pub fn for_level(f: &TensorFiltration, n: usize, orders: &[usize]) -> Result<Self> {
        if orders.len() != f.dim() {
            return Err(Error::DimensionMismatch {
                expected: f.dim(),
                found: orders.len(),
            });
        }
        Self::new(TensorSpace::from_partitions(&f.partitions(n)?, orders)?)
    }

    pub fn space(&self) -> &TensorSpace {
        &self.space
    }

    pub fn grams(&self) -> &[GramSystem] {
        &self.grams
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Applies `(G_1 (x) ... (x) G_d)^{-1}` in place, one mode at a time.
    pub fn solve_tensor(&self, data: &mut [f64]) {
        let shape = self.space.shape();
        let total: usize = shape.iter().product();
        assert_eq!(data.len(), total);
        for (axis, g) in self.grams.iter().enumerate() {
            let n = shape[axis];
            let stride: usize = shape[axis + 1..].iter().product();
            let outer = total / (n * stride);
            // fibers of one outer block are contiguous in memory order; each
            // block is independent
            data.par_chunks_mut(n * stride).take(outer).for_each(|block| {
                for inner in 0..stride {
                    g.cholesky().solve_strided(block, inner, stride);
                }
            });
        }
    }

    /// Right-hand sides `b_i = int f N_i` for an `R^m`-valued integrand
    /// `f(x, out)` via tensor Gauss quadrature.
    pub fn load_function<F>(&self, f: &F, m: usize, quad: &QuadratureSpec) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let d = self.dim();
        let rule = GaussLegendre::new(quad.points)?;
        let qparts: Vec<&Partition1D> = match &quad.partitions {
            Some(p) => {
                if p.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: p.len(),
                    });
                }
                p.clone()
            }
            None => self.space.spaces().iter().map(|s| s.partition()).collect(),
        };
        // per axis: nodes with weight, first active index and basis values
        let axes: Vec<AxisNodes> = self
            .space
            .spaces()
            .iter()
            .zip(&qparts)
            .map(|(s, qp)| AxisNodes::new(s, qp, &rule))
            .collect::<Result<_>>()?;
        let shape = self.space.shape();
        let rest: usize = shape[1..].iter().product();
        let k0 = self.space.axis(0).order();
        let g = rule.len();
        let q0 = qparts[0].num_atoms();
        let blocks: Vec<(usize, Vec<f64>)> = (0..q0)
            .into_par_iter()
            .map(|qa| {
                let first0 = axes[0].first[qa * g];
                let mut block = vec![0.0; k0 * rest * m];
                let mut x = vec![0.0; d];
                let mut fx = vec![0.0; m];
                let mut node = vec![0usize; d];
                for p0 in qa * g..(qa + 1) * g {
                    node[0] = p0;
                    x[0] = axes[0].x[p0];
                    debug_assert_eq!(axes[0].first[p0], first0);
                    for_each_node(&axes, &mut node, 1, &mut x, &mut |node, x| {
                        f(x, &mut fx);
                        let mut w = 1.0;
                        for (l, ax) in axes.iter().enumerate() {
                            w *= ax.w[node[l]];
                        }
                        accumulate(&axes, &shape, node, first0, w, &fx, &mut block, rest);
                    });
                }
                (first0, block)
            })
            .collect();
        let total: usize = shape.iter().product();
        let mut b = vec![vec![0.0; total]; m];
        for (first0, block) in blocks {
            for r in 0..k0 {
                for t in 0..rest {
                    let base = (r * rest + t) * m;
                    let flat = (first0 + r) * rest + t;
                    for c in 0..m {
                        b[c][flat] += block[base + c];
                    }
                }
            }
        }
        Ok(b)
    }

    /// `P f = sum_i (int f N_i) N*_i`.
    pub fn project_function<F>(&self, f: &F, m: usize, quad: &QuadratureSpec) -> Result<TensorSpline>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let mut b = self.load_function(f, m, quad)?;
        for comp in b.iter_mut() {
            self.solve_tensor(comp);
        }
        TensorSpline::new(self.space.clone(), b)
    }

    /// Projection of another spline whose partitions refine this space's;
    /// exact up to roundoff.
    pub fn project_spline(&self, s: &TensorSpline) -> Result<TensorSpline> {
        let parts: Vec<&Partition1D> = s.space().spaces().iter().map(|a| a.partition()).collect();
        let korder = s
            .space()
            .orders()
            .iter()
            .zip(self.space.orders())
            .map(|(a, b)| a + b)
            .max()
            .unwrap_or(2);
        let quad = QuadratureSpec {
            points: korder.div_ceil(2).max(1),
            partitions: Some(parts),
        };
        let f = |x: &[f64], out: &mut [f64]| {
            let v = s.eval(x).expect("quadrature node inside domain");
            out.copy_from_slice(&v);
        };
        self.project_function(&f, s.value_dim(), &quad)
    }

    /// Loads `b_i = int N_i d theta`: density by `quad_points` Gauss points
    /// per atom, point masses exactly.
    pub fn load_measure(&self, theta: &HybridMeasure, quad: &QuadratureSpec) -> Result<Vec<Vec<f64>>> {
        if theta.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: theta.dim(),
            });
        }
        let m = theta.value_dim();
        let mut b = if theta.density().is_zero() {
            vec![vec![0.0; self.space.len()]; m]
        } else {
            let dens = |x: &[f64], out: &mut [f64]| theta.density().eval(x, out);
            self.load_function(&dens, m, quad)?
        };
        for dirac in theta.diracs() {
            let windows = self.space.active(&dirac.location)?;
            self.space.for_each_active(&windows, |k, w| {
                for (bc, mc) in b.iter_mut().zip(&dirac.mass) {
                    bc[k] += w * mc;
                }
            });
        }
        Ok(b)
    }

    /// `g = sum_i (int N_i d theta) N*_i` for a hybrid measure.
    pub fn project_measure(&self, theta: &HybridMeasure, quad_points: usize) -> Result<TensorSpline> {
        let mut b = self.load_measure(theta, &QuadratureSpec::points(quad_points))?;
        for comp in b.iter_mut() {
            self.solve_tensor(comp);
        }
        TensorSpline::new(self.space.clone(), b)
    }

    /// Turns loads of a finer nested space into loads of this one:
    /// `int f N_i = sum_j R_ij int f N'_j` with `N_i = sum_j R_ij N'_j`.
    pub fn restrict_loads(&self, fine: &TensorProjector, b: &[f64]) -> Result<Vec<f64>> {
        if fine.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: fine.dim(),
            });
        }
        let mut shape = fine.space.shape();
        let mut data = b.to_vec();
        for axis in 0..self.dim() {
            let rows = refinement_matrix(self.space.axis(axis), &fine.grams[axis])?;
            data = apply_rows(&data, &shape, axis, &rows);
            shape[axis] = rows.len();
        }
        Ok(data)
    }

    /// Coefficients of `K(x, .) = sum_i N*_i(x) N_i(.)`.
    pub fn kernel_coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        let windows = self.space.active(x)?;
        let mut a = vec![0.0; self.space.len()];
        self.space.for_each_active(&windows, |k, w| a[k] += w);
        self.solve_tensor(&mut a);
        Ok(a)
    }

    /// Operator norm estimated directly in `d` dimensions: sup over the
    /// product Chebyshev grid of `int |K(x, y)| dy` by tensor Gauss rules.
    /// Costly; intended for small spaces.
    pub fn operator_norm_inf(&self, samples_per_atom: usize, quad_points: usize) -> Result<OperatorNorm> {
        if self.dim() == 1 {
            return self.grams[0].operator_norm_inf(samples_per_atom, quad_points);
        }
        let rule = GaussLegendre::new(quad_points)?;
        let cheb = chebyshev_fractions(samples_per_atom);
        let sample_axes: Vec<Vec<f64>> = self
            .space
            .spaces()
            .iter()
            .map(|s| {
                let p = s.partition();
                (0..p.num_atoms())
                    .flat_map(|j| {
                        let a = p.atom(j);
                        cheb.iter().map(move |&t| a.lo + t * a.width()).collect::<Vec<_>>()
                    })
                    .collect()
            })
            .collect();
        let quad_axes: Vec<AxisNodes> = self
            .space
            .spaces()
            .iter()
            .map(|s| AxisNodes::new(s, s.partition(), &rule))
            .collect::<Result<_>>()?;
        // per axis, the banded node-by-basis matrix
        let rows: Vec<Vec<(usize, Vec<f64>)>> = quad_axes
            .iter()
            .map(|ax| {
                (0..ax.len())
                    .map(|p| (ax.first[p], ax.vals[p * ax.k..(p + 1) * ax.k].to_vec()))
                    .collect()
            })
            .collect();
        let mut weights = vec![1.0];
        for ax in &quad_axes {
            weights = weights.iter().flat_map(|&w| ax.w.iter().map(move |v| w * v)).collect();
        }
        let counts: Vec<usize> = sample_axes.iter().map(Vec::len).collect();
        let total: usize = counts.iter().product();
        let shape = self.space.shape();
        let results: Vec<(f64, Vec<f64>)> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let idx = crate::filtration::unflat_index(&counts, flat);
                let x: Vec<f64> = idx.iter().zip(&sample_axes).map(|(&i, s)| s[i]).collect();
                // K(x, .) on the node grid, one mode product per axis
                let mut data = self.kernel_coefficients(&x).expect("sample inside domain");
                let mut cur = shape.clone();
                for (l, r) in rows.iter().enumerate() {
                    data = apply_rows(&data, &cur, l, r);
                    cur[l] = r.len();
                }
                let integral = data.iter().zip(&weights).map(|(v, w)| w * v.abs()).sum();
                (integral, x)
            })
            .collect();
        let (value, argmax) = results
            .into_iter()
            .fold((0.0, vec![]), |acc, v| if v.0 > acc.0 { v } else { acc });
        Ok(OperatorNorm {
            value,
            argmax,
            samples_per_atom,
            quad_points,
        })
    }
}

/// Quadrature nodes of one axis with the active basis window at each node.
struct AxisNodes {
    x: Vec<f64>,
    w: Vec<f64>,
    first: Vec<usize>,
    vals: Vec<f64>,
    k: usize,
}

impl AxisNodes {
    fn new(space: &SplineSpace1D, qpart: &Partition1D, rule: &GaussLegendre) -> Result<Self> {
        let k = space.order();
        let own = space.partition();
        if qpart.domain() != own.domain() {
            return Err(Error::InvalidParameter(
                "quadrature partition has a different domain".into(),
            ));
        }
        let parents = own.parent_map(qpart);
        let mut out = Self {
            x: vec![],
            w: vec![],
            first: vec![],
            vals: vec![],
            k,
        };
        let mut buf = [0.0; MAX_ORDER];
        for (qa, &j) in parents.iter().enumerate() {
            let a = qpart.atom(qa);
            let pa = own.atom(j);
            if a.lo < pa.lo - 1e-15 * pa.width() || a.hi > pa.hi + 1e-15 * pa.width() {
                return Err(Error::InvalidParameter(
                    "quadrature partition does not refine the spline partition".into(),
                ));
            }
            for (x, w) in rule.mapped(a.lo, a.hi) {
                space.basis_on_atom(j, x, &mut buf);
                out.x.push(x);
                out.w.push(w);
                out.first.push(j);
                out.vals.extend_from_slice(&buf[..k]);
            }
        }
        Ok(out)
    }

    fn len(&self) -> usize {
        self.x.len()
    }
}

/// Visits every node of the tensor grid spanned by axes `from..d`, with the
/// leading coordinates of `node`/`x` held fixed.
fn for_each_node<F: FnMut(&[usize], &[f64])>(
    axes: &[AxisNodes],
    node: &mut Vec<usize>,
    from: usize,
    x: &mut Vec<f64>,
    visit: &mut F,
) {
    if from == axes.len() {
        visit(node, x);
        return;
    }
    for p in 0..axes[from].len() {
        node[from] = p;
        x[from] = axes[from].x[p];
        for_each_node(axes, node, from + 1, x, visit);
    }
}

/// Visits `(flat basis index, basis product)` over the active window at a
/// tensor node.
fn tensor_window<F: FnMut(usize, f64)>(axes: &[AxisNodes], shape: &[usize], node: &[usize], visit: &mut F) {
    let d = axes.len();
    let mut r = vec![0usize; d];
    loop {
        let mut flat = 0;
        let mut w = 1.0;
        for l in 0..d {
            let ax = &axes[l];
            let p = node[l];
            flat = flat * shape[l] + ax.first[p] + r[l];
            w *= ax.vals[p * ax.k + r[l]];
        }
        visit(flat, w);
        let mut l = d;
        loop {
            if l == 0 {
                return;
            }
            l -= 1;
            r[l] += 1;
            if r[l] < axes[l].k {
                break;
            }
            r[l] = 0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    axes: &[AxisNodes],
    shape: &[usize],
    node: &[usize],
    first0: usize,
    w: f64,
    fx: &[f64],
    block: &mut [f64],
    rest: usize,
) {
    let m = fx.len();
    tensor_window(axes, shape, node, &mut |flat, bw| {
        let row = flat / rest - first0;
        let t = flat % rest;
        let base = (row * rest + t) * m;
        let s = w * bw;
        for c in 0..m {
            block[base + c] += s * fx[c];
        }
    });
}
