//! Level sums of `b_n` terms, the maximal operator `M_K`, exact superlevel
//! volumes and the covering bounds built on them.
//!
//! Level sums are computed with a separable kernel: for the tensor atom grid
//! `q^{d_n(A, A')} / |conv(A u A')|` factors into one `q^{|i-j|} / hull`
//! matrix per axis, so one level costs a matrix product per axis instead of
//! a sum over all atom pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filtration::{flat_index, unflat_index, AtomIndex, AtomSet, Partition1D, TensorFiltration};
use crate::measures::{ClosureMode, HybridMeasure};

/// Relative size of the series tail left after truncation.
pub const SERIES_REL_TOL: f64 = 1e-12;

/// Nonnegative scalar masses `theta(A)` of every atom of every level.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomMasses {
    shapes: Vec<Vec<usize>>,
    levels: Vec<Vec<f64>>,
}

impl AtomMasses {
    /// Masses of a nonnegative scalar measure.
    pub fn from_measure(theta: &HybridMeasure, f: &TensorFiltration, mode: ClosureMode) -> Result<Self> {
        if theta.value_dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: theta.value_dim(),
            });
        }
        let vals = theta.atom_values_all_levels(f, mode)?;
        let mut levels = Vec::with_capacity(vals.len());
        for (n, lv) in vals.into_iter().enumerate() {
            let shape = f.shape(n + 1)?;
            let mut out = Vec::with_capacity(lv.len());
            for (k, v) in lv.into_iter().enumerate() {
                if v[0] < 0.0 {
                    return Err(Error::NegativeMeasure {
                        atom: unflat_index(&shape, k),
                        value: v[0],
                    });
                }
                out.push(v[0]);
            }
            levels.push(out);
        }
        Ok(Self {
            shapes: (1..=f.depth()).map(|n| f.shape(n)).collect::<Result<_>>()?,
            levels,
        })
    }

    /// Masses given on the deepest level, summed up the hierarchy.
    pub fn from_finest(f: &TensorFiltration, finest: Vec<f64>) -> Result<Self> {
        let depth = f.depth();
        let fine_shape = f.shape(depth)?;
        let total: usize = fine_shape.iter().product();
        if finest.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                found: finest.len(),
            });
        }
        if let Some(k) = finest.iter().position(|&v| v < 0.0 || v.is_nan()) {
            return Err(Error::NegativeMeasure {
                atom: unflat_index(&fine_shape, k),
                value: finest[k],
            });
        }
        let mut levels = Vec::with_capacity(depth);
        let mut shapes = Vec::with_capacity(depth);
        for n in 1..depth {
            let shape = f.shape(n)?;
            let maps = f.parent_maps(depth, n)?;
            let mut out = vec![0.0; shape.iter().product()];
            for (k, &v) in finest.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let idx = unflat_index(&fine_shape, k);
                let parent: Vec<usize> = idx.iter().zip(&maps).map(|(&j, m)| m[j]).collect();
                out[flat_index(&shape, &parent)] += v;
            }
            levels.push(out);
            shapes.push(shape);
        }
        levels.push(finest);
        shapes.push(fine_shape);
        Ok(Self { shapes, levels })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Masses of level `n` (1-based), flattened row-major.
    pub fn level(&self, n: usize) -> &[f64] {
        &self.levels[n - 1]
    }

    pub fn shape(&self, n: usize) -> &[usize] {
        &self.shapes[n - 1]
    }

    pub fn total(&self) -> f64 {
        self.levels[0].iter().sum()
    }

    /// `theta` of a union of atoms of one level.
    pub fn of_set(&self, set: &AtomSet) -> f64 {
        self.levels[set.level() - 1]
            .iter()
            .zip(set.mask())
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum()
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("q must lie in [0, 1), got {q}")));
    }
    Ok(())
}

fn qpow(q: f64, s: usize) -> f64 {
    // 0^0 = 1: the distance-zero term is always present
    q.powi(s as i32)
}

/// `b_n(q, theta, A, x) = q^{d_n(A, A_n(x))} theta(A) / |conv(A u A_n(x))|`.
pub fn b_term(
    q: f64,
    theta: &HybridMeasure,
    f: &TensorFiltration,
    n: usize,
    a: &AtomIndex,
    x: &[f64],
) -> Result<f64> {
    check_q(q)?;
    if theta.value_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: theta.value_dim(),
        });
    }
    let mass = theta.measure_of_atom(f, n, a, ClosureMode::Open)?[0];
    if mass < 0.0 {
        return Err(Error::NegativeMeasure {
            atom: a.0.clone(),
            value: mass,
        });
    }
    let (ax, _) = f.atom_of(n, x)?;
    let s = f.atom_distance(n, a, &ax)?;
    Ok(qpow(q, s) * mass / f.hull_volume(n, a, &ax)?)
}

/// Level sum at `x` by direct summation of `b_n` over all atoms.
pub fn level_sum_at(q: f64, theta: &HybridMeasure, f: &TensorFiltration, n: usize, x: &[f64]) -> Result<f64> {
    let shape = f.shape(n)?;
    let total: usize = shape.iter().product();
    let mut s = 0.0;
    for k in 0..total {
        s += b_term(q, theta, f, n, &AtomIndex(unflat_index(&shape, k)), x)?;
    }
    Ok(s)
}

/// Dense `q^{|i-j|} / hull(i, j)` for one axis partition.
fn axis_kernel(q: f64, p: &Partition1D) -> Vec<f64> {
    let m = p.num_atoms();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = qpow(q, i.abs_diff(j)) / p.hull_width(i, j);
        }
    }
    out
}

/// Applies an `m x m` kernel along one axis of a row-major array.
fn apply_axis(data: &[f64], shape: &[usize], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let m = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer = data.len() / (m * stride);
    let mut out = vec![0.0; data.len()];
    let mut fiber = vec![0.0; m];
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * m * stride + inner;
            for (j, v) in fiber.iter_mut().enumerate() {
                *v = data[base + j * stride];
            }
            if fiber.iter().all(|&v| v == 0.0) {
                continue;
            }
            for i in 0..m {
                let row = &kernel[i * m..(i + 1) * m];
                out[base + i * stride] = row.iter().zip(&fiber).map(|(a, b)| a * b).sum();
            }
        }
    }
    out
}

/// Level sums of level `n`, one value per level-`n` atom.
pub fn level_sums(q: f64, masses: &AtomMasses, f: &TensorFiltration, n: usize) -> Result<Vec<f64>> {
    check_q(q)?;
    f.check_level(n)?;
    if n > masses.depth() {
        return Err(Error::LevelOutOfRange {
            level: n,
            depth: masses.depth(),
        });
    }
    let shape = f.shape(n)?;
    let mut data = masses.level(n).to_vec();
    for (axis, p) in f.partitions(n)?.into_iter().enumerate() {
        data = apply_axis(&data, &shape, axis, &axis_kernel(q, p));
    }
    Ok(data)
}

/// `M_K theta` on the atoms of level `n_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximalField {
    pub k_start: usize,
    pub n_max: usize,
    pub q: f64,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Volume of each level-`n_max` atom.
    pub volumes: Vec<f64>,
}

fn atom_volumes(f: &TensorFiltration, n: usize) -> Result<Vec<f64>> {
    let parts = f.partitions(n)?;
    let shape = f.shape(n)?;
    let total: usize = shape.iter().product();
    Ok((0..total)
        .map(|k| {
            let idx = unflat_index(&shape, k);
            parts.iter().zip(&idx).map(|(p, &j)| p.width(j)).product()
        })
        .collect())
}

/// Values on level `coarse` pulled back to the atoms of level `fine`.
fn pull_back(f: &TensorFiltration, coarse: usize, fine: usize, values: &[f64]) -> Result<Vec<f64>> {
    let maps = f.parent_maps(fine, coarse)?;
    let cshape = f.shape(coarse)?;
    let fshape = f.shape(fine)?;
    let total: usize = fshape.iter().product();
    Ok((0..total)
        .map(|k| {
            let idx = unflat_index(&fshape, k);
            let parent: Vec<usize> = idx.iter().zip(&maps).map(|(&j, m)| m[j]).collect();
            values[flat_index(&cshape, &parent)]
        })
        .collect())
}

/// `max_{K <= n <= N_max}` of the level sums, exact on the level-`N_max` grid.
pub fn maximal_field(
    q: f64,
    masses: &AtomMasses,
    f: &TensorFiltration,
    k_start: usize,
    n_max: usize,
) -> Result<MaximalField> {
    if k_start == 0 || k_start > n_max {
        return Err(Error::InvalidParameter(format!(
            "level range {k_start}..={n_max} is empty"
        )));
    }
    f.check_level(n_max)?;
    let shape = f.shape(n_max)?;
    let mut values = vec![0.0; shape.iter().product()];
    for n in k_start..=n_max {
        let sums = level_sums(q, masses, f, n)?;
        let pulled = pull_back(f, n, n_max, &sums)?;
        for (v, p) in values.iter_mut().zip(pulled) {
            *v = f64::max(*v, p);
        }
    }
    Ok(MaximalField {
        k_start,
        n_max,
        q,
        shape,
        values,
        volumes: atom_volumes(f, n_max)?,
    })
}

impl MaximalField {
    /// `|{M > t}|`, or `|B n {M > t}|` when `within` is given (a set of any
    /// level up to `n_max`).
    pub fn superlevel_measure(&self, f: &TensorFiltration, t: f64, within: Option<&AtomSet>) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveThreshold(t));
        }
        let mask = self.restriction(f, within)?;
        Ok(self
            .values
            .iter()
            .zip(&self.volumes)
            .enumerate()
            .filter(|(k, (&v, _))| v > t && mask.as_ref().is_none_or(|m| m[*k]))
            .map(|(_, (_, w))| w)
            .sum())
    }

    fn restriction(&self, f: &TensorFiltration, within: Option<&AtomSet>) -> Result<Option<Vec<bool>>> {
        within
            .map(|b| {
                if b.level() > self.n_max {
                    return Err(Error::InvalidParameter(format!(
                        "restriction set lives on level {} beyond {}",
                        b.level(),
                        self.n_max
                    )));
                }
                Ok(b.refine_to(f, self.n_max)?.mask().to_vec())
            })
            .transpose()
    }

    /// Exact `sup_t t |{M > t}|` (restricted to `within`), with the
    /// threshold where it is approached from below.
    pub fn weak_type_sup(&self, f: &TensorFiltration, within: Option<&AtomSet>) -> Result<(f64, f64)> {
        let mask = self.restriction(f, within)?;
        let pairs: Vec<(f64, f64)> = self
            .values
            .iter()
            .zip(&self.volumes)
            .enumerate()
            .filter(|(k, _)| mask.as_ref().is_none_or(|m| m[*k]))
            .map(|(_, (&v, &w))| (v, w))
            .collect();
        Ok(weak_type_sup(pairs))
    }
}

/// `sup_t t |{g > t}|` for a step function given as (value, volume) pairs.
/// The sup is approached as `t` rises to one of the values `v`, where the
/// superlevel set is `{g >= v}`.
pub fn weak_type_sup(mut pairs: Vec<(f64, f64)>) -> (f64, f64) {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = (0.0, 0.0);
    let mut vol = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            vol += pairs[i].1;
            i += 1;
        }
        if v > 0.0 && v * vol > best.0 {
            best = (v * vol, v);
        }
    }
    best
}

/// Truncated series `sum_s rho^s (s+1)^{d-1} theta(A_{K,s}(B))` with a
/// rigorous bound on the part beyond the cutoff.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesBound {
    pub rho: f64,
    pub cutoff: usize,
    pub partial: f64,
    pub tail: f64,
    /// `theta(A_{K,s}(B))` for `s = 0..=cutoff`.
    pub masses: Vec<f64>,
}

impl SeriesBound {
    pub fn value(&self) -> f64 {
        self.partial + self.tail
    }
}

/// `sum_{s > S} rho^s (s+1)^{d-1}`, bounded above by a geometric series:
/// successive term ratios past `S` are at most `rho ((S+3)/(S+2))^{d-1}`.
/// Returns `None` when that ratio is not below one.
pub fn weight_tail_bound(rho: f64, d: usize, cutoff: usize) -> Option<f64> {
    if rho == 0.0 {
        return Some(0.0);
    }
    let s = cutoff as f64;
    let ratio = rho * ((s + 3.0) / (s + 2.0)).powi(d as i32 - 1);
    if ratio >= 1.0 {
        return None;
    }
    let first = rho.powi(cutoff as i32 + 1) * (s + 2.0).powi(d as i32 - 1);
    Some(first / (1.0 - ratio))
}

/// `sum_{s >= 0} rho^s (s+1)^{d-1}` to relative accuracy `SERIES_REL_TOL`,
/// returned as an upper bound (partial sum plus tail bound).
pub fn weight_sum(rho: f64, d: usize) -> f64 {
    let mut partial = 0.0;
    let mut s = 0usize;
    loop {
        partial += qpow(rho, s) * ((s + 1) as f64).powi(d as i32 - 1);
        if let Some(t) = weight_tail_bound(rho, d, s) {
            if t <= SERIES_REL_TOL * partial {
                return partial + t;
            }
        }
        s += 1;
    }
}

/// Right-hand side series of the covering bound for `B` at level `B.level()`.
pub fn thm32_rhs(b: &AtomSet, masses: &AtomMasses, q: f64, d: usize) -> Result<SeriesBound> {
    check_q(q)?;
    let rho = q.sqrt();
    let level = b.level();
    if level > masses.depth() || masses.shape(level) != b.shape() {
        return Err(Error::InvalidParameter("atom set does not match the masses".into()));
    }
    let total = masses.total();
    let lv = masses.level(level);
    let dist = b.distance_map();
    let max_dist = dist.iter().copied().filter(|&v| v != usize::MAX).max();
    let mut ms = Vec::new();
    let mut partial = 0.0;
    let mut s = 0usize;
    loop {
        let m: f64 = match max_dist {
            None => 0.0,
            Some(_) => lv.iter().zip(&dist).filter(|(_, &dd)| dd <= s).map(|(v, _)| v).sum(),
        };
        ms.push(m);
        partial += qpow(rho, s) * ((s + 1) as f64).powi(d as i32 - 1) * m;
        let tail = match max_dist {
            None => Some(0.0),
            Some(_) => weight_tail_bound(rho, d, s).map(|t| t * total),
        };
        if let Some(t) = tail {
            if t <= SERIES_REL_TOL * partial || partial == 0.0 && t == 0.0 {
                return Ok(SeriesBound {
                    rho,
                    cutoff: s,
                    partial,
                    tail: t,
                    masses: ms,
                });
            }
        }
        s += 1;
    }
}

/// `2^d c` with `c = (2 / (1 - sqrt q))^d`.
pub fn covering_constant(q: f64, d: usize) -> f64 {
    let c = (2.0 / (1.0 - q.sqrt())).powi(d as i32);
    2f64.powi(d as i32) * c
}

/// Proof constant of the weak-type bound for `M_1`: `2^d c sum_s rho^s (s+1)^{d-1}`.
pub fn weak_type_constant(q: f64, d: usize) -> f64 {
    covering_constant(q, d) * weight_sum(q.sqrt(), d)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakTypeRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakTypeReport {
    pub q: f64,
    pub k_start: usize,
    pub n_max: usize,
    /// `2^d c`.
    pub constant: f64,
    pub series: SeriesBound,
    pub rows: Vec<WeakTypeRow>,
    pub max_ratio: f64,
}

impl WeakTypeReport {
    pub fn holds(&self) -> bool {
        self.max_ratio <= 1.0
    }
}

/// Checks `|B n {M_K theta > t}| <= 2^d c / t * series` on a grid of `t`.
pub fn verify_covering_bound(
    f: &TensorFiltration,
    masses: &AtomMasses,
    q: f64,
    n_max: usize,
    b: &AtomSet,
    t_grid: &[f64],
) -> Result<WeakTypeReport> {
    let k_start = b.level();
    let field = maximal_field(q, masses, f, k_start, n_max)?;
    let series = thm32_rhs(b, masses, q, f.dim())?;
    let constant = covering_constant(q, f.dim());
    let mut rows = Vec::with_capacity(t_grid.len());
    let mut max_ratio: f64 = 0.0;
    for &t in t_grid {
        let lhs = field.superlevel_measure(f, t, Some(b))?;
        let rhs = constant * series.value() / t;
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        max_ratio = max_ratio.max(ratio);
        rows.push(WeakTypeRow { t, lhs, rhs, ratio });
    }
    Ok(WeakTypeReport {
        q,
        k_start,
        n_max,
        constant,
        series,
        rows,
        max_ratio,
    })
}

/// `count` log-spaced thresholds from half the smallest positive field value
/// on `B` to its largest value.
pub fn default_t_grid(field: &MaximalField, f: &TensorFiltration, b: Option<&AtomSet>, count: usize) -> Result<Vec<f64>> {
    let mask = field.restriction(f, b)?;
    let vals: Vec<f64> = field
        .values
        .iter()
        .enumerate()
        .filter(|(k, &v)| v > 0.0 && mask.as_ref().is_none_or(|m| m[*k]))
        .map(|(_, &v)| v)
        .collect();
    if vals.is_empty() || count == 0 {
        return Ok(vec![]);
    }
    let lo = 0.5 * vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(0.0, f64::max);
    if count == 1 {
        return Ok(vec![hi]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Baseline maximal function on a 1D partition: for each atom, the largest
/// average `theta(J) / |J|` over breakpoint-delimited intervals `J`
/// containing it.
pub fn hl_maximal(p: &Partition1D, masses: &[f64]) -> Result<Vec<f64>> {
    let m = p.num_atoms();
    if masses.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: masses.len(),
        });
    }
    let bp = p.breakpoints();
    let mut prefix = vec![0.0; m + 1];
    for j in 0..m {
        prefix[j + 1] = prefix[j] + masses[j];
    }
    let mut best = vec![0.0f64; m];
    let mut suffix = vec![0.0f64; m];
    for i in 0..m {
        // suffix[a] = max_{j >= a} avg(i..=j), for a >= i
        let mut run = f64::NEG_INFINITY;
        for j in (i..m).rev() {
            let avg = (prefix[j + 1] - prefix[i]) / (bp[j + 1] - bp[i]);
            run = run.max(avg);
            suffix[j] = run;
        }
        for a in i..m {
            best[a] = best[a].max(suffix[a]);
        }
    }
    Ok(best)
}

/// Hardy–Littlewood baseline for a measure on a 1D filtration (finest level).
pub fn hl_maximal_measure(theta: &HybridMeasure, f: &TensorFiltration) -> Result<Vec<f64>> {
    if f.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "the baseline maximal function is one-dimensional, got d = {}",
            f.dim()
        )));
    }
    let masses = AtomMasses::from_measure(theta, f, ClosureMode::Open)?;
    let depth = f.depth();
    hl_maximal(f.partitions(depth)?[0], masses.level(depth))
}

/// Outcome of the restricted (local) weak-type bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RestrictedBoundReport {
    pub epsilon: f64,
    pub theta_d: f64,
    pub t: f64,
    /// Distance buffer: the tail beyond `r` is at most `epsilon`.
    pub r: usize,
    /// Start level of the maximal function; `None` if no level up to the
    /// depth leaves a nonempty buffered set.
    pub k: Option<usize>,
    pub b_volume: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Builds the buffered set `B` inside `D` (level-`K` atoms farther than `R`
/// from the complement of `D`, so `A_{K,R}(B)` stays inside `D`) and checks
/// `|B n {M_K theta > t}| <= 2^d c / t (W theta(D) + tail_R theta(I))`.
pub fn restricted_limsup_bound(
    f: &TensorFiltration,
    masses: &AtomMasses,
    q: f64,
    d_set: &AtomSet,
    epsilon: f64,
    t: f64,
) -> Result<RestrictedBoundReport> {
    check_q(q)?;
    if !(t > 0.0) {
        return Err(Error::NonPositiveThreshold(t));
    }
    let theta_d = masses.of_set(d_set);
    if theta_d > epsilon {
        return Err(Error::InvalidParameter(format!(
            "theta(D) = {theta_d} exceeds epsilon = {epsilon}"
        )));
    }
    let dim = f.dim();
    let rho = q.sqrt();
    let total = masses.total();
    let mut r = 0usize;
    let tail_r = loop {
        match weight_tail_bound(rho, dim, r) {
            Some(t) if t * total <= epsilon => break t,
            _ => r += 1,
        }
    };
    let depth = f.depth();
    let mut chosen = None;
    for k in d_set.level()..=depth {
        let dk = d_set.refine_to(f, k)?;
        let outside = dk.complement();
        let dist = outside.distance_map();
        let mask: Vec<bool> = dist.iter().map(|&v| v > r).collect();
        if mask.iter().any(|&m| m) {
            chosen = Some((k, AtomSet::from_mask(f, k, mask)?));
            break;
        }
    }
    let Some((k, b)) = chosen else {
        return Ok(RestrictedBoundReport {
            epsilon,
            theta_d,
            t,
            r,
            k: None,
            b_volume: 0.0,
            lhs: 0.0,
            rhs: f64::INFINITY,
            holds: true,
        });
    };
    let field = maximal_field(q, masses, f, k, depth)?;
    let lhs = field.superlevel_measure(f, t, Some(&b))?;
    let rhs = covering_constant(q, dim) / t * (weight_sum(rho, dim) * theta_d + tail_r * total);
    Ok(RestrictedBoundReport {
        epsilon,
        theta_d,
        t,
        r,
        k: Some(k),
        b_volume: b.volume(f)?,
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::{build_filtration, FiltrationSpec, NeighborhoodSeed, RefinementRule};
    use crate::measures::Density;

    fn lebesgue(d: usize) -> HybridMeasure {
        HybridMeasure::absolutely_continuous(d, Density::Constant { value: 1.0 }).unwrap()
    }

    #[test]
    fn b_term_examples() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 3)).unwrap();
        let lam = lebesgue(1);
        let (a, _) = f.atom_of(3, &[0.3]).unwrap();
        assert!((b_term(0.5, &lam, &f, 3, &a, &[0.3]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(b_term(0.0, &lam, &f, 3, &AtomIndex(vec![5]), &[0.3]).unwrap(), 0.0);
        let dirac = HybridMeasure::point_mass(vec![0.05], 1.0).unwrap();
        // x three atoms to the right: q^3 / (4 h)
        let got = b_term(0.5, &dirac, &f, 3, &AtomIndex(vec![0]), &[0.45]).unwrap();
        assert!((got - 0.125 / (4.0 * 0.125)).abs() < 1e-15);
        let signed = HybridMeasure::point_mass(vec![0.05], -1.0).unwrap();
        assert!(matches!(
            b_term(0.5, &signed, &f, 3, &AtomIndex(vec![0]), &[0.45]),
            Err(Error::NegativeMeasure { .. })
        ));
    }

    #[test]
    fn two_atom_level_sum() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 1)).unwrap();
        let v = level_sum_at(0.5, &lebesgue(1), &f, 1, &[0.2]).unwrap();
        assert!((v - 1.25).abs() < 1e-15);
        let m = AtomMasses::from_measure(&lebesgue(1), &f, ClosureMode::Open).unwrap();
        let sums = level_sums(0.5, &m, &f, 1).unwrap();
        assert!((sums[0] - 1.25).abs() < 1e-15 && (sums[1] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn separable_sums_match_brute_force() {
        let spec = FiltrationSpec::new(
            2,
            [0.0, 1.0],
            3,
            RefinementRule::RandomAtomBisect {
                split_prob: 0.7,
                jitter: 0.3,
            },
            11,
        );
        let f = build_filtration(&spec).unwrap();
        let theta = HybridMeasure::new(
            2,
            Density::Polynomial {
                terms: vec![crate::measures::Monomial {
                    coef: 1.0,
                    powers: vec![1, 2],
                }],
            },
            vec![crate::measures::Dirac {
                location: vec![0.61, 0.2],
                mass: vec![0.7],
            }],
        )
        .unwrap();
        let masses = AtomMasses::from_measure(&theta, &f, ClosureMode::Open).unwrap();
        for n in 1..=3 {
            let sums = level_sums(0.4, &masses, &f, n).unwrap();
            let shape = f.shape(n).unwrap();
            for (k, s) in sums.iter().enumerate() {
                let r = f.rect(n, &AtomIndex(unflat_index(&shape, k))).unwrap();
                // atomwise constancy at three interior points
                for t in [0.2, 0.5, 0.9] {
                    let x: Vec<f64> = r.sides.iter().map(|iv| iv.lo + t * iv.width()).collect();
                    let brute = level_sum_at(0.4, &theta, &f, n, &x).unwrap();
                    assert!((brute - s).abs() <= 1e-12 * brute.max(1.0), "{brute} vs {s}");
                }
            }
        }
    }

    #[test]
    fn maximal_field_properties() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 6)).unwrap();
        let dirac = HybridMeasure::point_mass(vec![0.3], 1.0).unwrap();
        let m = AtomMasses::from_measure(&dirac, &f, ClosureMode::Open).unwrap();
        let single = maximal_field(0.5, &m, &f, 4, 4).unwrap();
        assert_eq!(single.values, level_sums(0.5, &m, &f, 4).unwrap());
        let mut prev: Option<MaximalField> = None;
        for n in 1..=6 {
            let fld = maximal_field(0.5, &m, &f, 1, n).unwrap();
            if let Some(p) = &prev {
                let pulled = pull_back(&f, n - 1, n, &p.values).unwrap();
                assert!(fld.values.iter().zip(&pulled).all(|(a, b)| a >= b));
            }
            prev = Some(fld);
        }
        let fld = prev.unwrap();
        let (at, _) = f.atom_of(6, &[0.3]).unwrap();
        assert!((fld.values[at.0[0]] - 64.0).abs() < 1e-12);
        assert!(maximal_field(0.5, &m, &f, 3, 2).is_err());
    }

    #[test]
    fn superlevel_examples() {
        let f = build_filtration(&FiltrationSpec::dyadic(2, 3)).unwrap();
        let m = AtomMasses::from_measure(&lebesgue(2), &f, ClosureMode::Open).unwrap();
        let fld = maximal_field(0.5, &m, &f, 1, 3).unwrap();
        let top = fld.values.iter().copied().fold(0.0, f64::max);
        assert_eq!(fld.superlevel_measure(&f, top * 1.01, None).unwrap(), 0.0);
        assert!((fld.superlevel_measure(&f, 1e-9, None).unwrap() - 1.0).abs() < 1e-14);
        let mut last = f64::INFINITY;
        for i in 1..40 {
            let v = fld.superlevel_measure(&f, i as f64 * 0.1, None).unwrap();
            assert!(v <= last);
            last = v;
        }
        assert!(matches!(fld.superlevel_measure(&f, 0.0, None), Err(Error::NonPositiveThreshold(_))));
    }

    #[test]
    fn series_examples() {
        let f = build_filtration(&FiltrationSpec::dyadic(2, 2)).unwrap();
        let m = AtomMasses::from_measure(&lebesgue(2), &f, ClosureMode::Open).unwrap();
        let full = AtomSet::full(&f, 2).unwrap();
        let s = thm32_rhs(&full, &m, 0.5, 2).unwrap();
        assert!((s.value() - weight_sum(0.5f64.sqrt(), 2)).abs() < 1e-10);
        let zero = AtomMasses::from_finest(&f, vec![0.0; 16]).unwrap();
        assert_eq!(thm32_rhs(&full, &zero, 0.5, 2).unwrap().value(), 0.0);

        // d = 1, four atoms, B = leftmost, theta = lambda: direct summation
        let f1 = build_filtration(&FiltrationSpec::dyadic(1, 2)).unwrap();
        let m1 = AtomMasses::from_measure(&lebesgue(1), &f1, ClosureMode::Open).unwrap();
        let b = AtomSet::from_indices(&f1, 2, [AtomIndex(vec![0])]).unwrap();
        let got = thm32_rhs(&b, &m1, 0.25, 1).unwrap().value();
        let mut direct = 0.0;
        for s in 0..2000 {
            let nb = f1.neighborhood(2, &NeighborhoodSeed::Set(b.clone()), s).unwrap();
            direct += 0.5f64.powi(s as i32) * m1.of_set(&nb);
        }
        assert!((got - direct).abs() < 1e-12);
        assert!((direct - (0.25 + 0.5 * 0.5 + 0.25 * 0.75 + 0.125 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn tail_bound_is_an_upper_bound() {
        for d in 1..=3 {
            for &rho in &[0.1, 0.5, 0.9] {
                for cutoff in [0usize, 3, 10, 40] {
                    let Some(bound) = weight_tail_bound(rho, d, cutoff) else {
                        continue;
                    };
                    let exact: f64 = ((cutoff + 1)..5000)
                        .map(|s| rho.powi(s as i32) * ((s + 1) as f64).powi(d as i32 - 1))
                        .sum();
                    assert!(exact <= bound * (1.0 + 1e-12), "{d} {rho} {cutoff}");
                }
            }
        }
    }

    #[test]
    fn hl_examples() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 1)).unwrap();
        let ind = HybridMeasure::absolutely_continuous(
            1,
            Density::Step {
                axis: 0,
                breaks: vec![0.5],
                values: vec![1.0, 0.0],
            },
        )
        .unwrap();
        let hl = hl_maximal_measure(&ind, &f).unwrap();
        assert!((hl[1] - 0.5).abs() < 1e-15 && (hl[0] - 1.0).abs() < 1e-15);
        let f4 = build_filtration(&FiltrationSpec::dyadic(1, 4)).unwrap();
        let c = hl_maximal_measure(
            &HybridMeasure::absolutely_continuous(1, Density::Constant { value: 2.5 }).unwrap(),
            &f4,
        )
        .unwrap();
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-14));
        let f2 = build_filtration(&FiltrationSpec::dyadic(2, 1)).unwrap();
        assert!(matches!(hl_maximal_measure(&lebesgue(2), &f2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn weak_sup_is_exact() {
        let (v, t) = weak_type_sup(vec![(3.0, 0.1), (1.0, 0.5), (2.0, 0.2), (0.0, 0.2)]);
        // candidates 3*0.1, 2*0.3, 1*0.8
        assert!((v - 0.8).abs() < 1e-15 && t == 1.0);
    }

    #[test]
    fn covering_bound_on_a_dirac() {
        let f = build_filtration(&FiltrationSpec::dyadic(2, 5)).unwrap();
        let dirac = HybridMeasure::point_mass(vec![0.3, 0.7], 1.0).unwrap();
        let m = AtomMasses::from_measure(&dirac, &f, ClosureMode::Open).unwrap();
        let b = AtomSet::from_indices(&f, 2, [AtomIndex(vec![3, 0])]).unwrap();
        let fld = maximal_field(0.3, &m, &f, 2, 5).unwrap();
        let grid = default_t_grid(&fld, &f, Some(&b), 20).unwrap();
        let rep = verify_covering_bound(&f, &m, 0.3, 5, &b, &grid).unwrap();
        assert!(rep.holds(), "{}", rep.max_ratio);
        let big = fld.values.iter().copied().fold(0.0, f64::max);
        assert_eq!(fld.superlevel_measure(&f, big, Some(&b)).unwrap(), 0.0);
    }

    #[test]
    fn restricted_bound_examples() {
        let f = build_filtration(&FiltrationSpec::dyadic(2, 6)).unwrap();
        let dirac = HybridMeasure::point_mass(vec![0.3, 0.3], 1.0).unwrap();
        let m = AtomMasses::from_measure(&dirac, &f, ClosureMode::Open).unwrap();
        // D away from the mass: theta(D) = 0
        let d = AtomSet::from_indices(&f, 1, [AtomIndex(vec![1, 1])]).unwrap();
        let rep = restricted_limsup_bound(&f, &m, 0.3, &d, 1e-3, 5.0).unwrap();
        assert!(rep.holds);
        let full = AtomSet::full(&f, 1).unwrap();
        assert!(restricted_limsup_bound(&f, &m, 0.3, &full, 0.5, 1.0).is_err());
    }
}
