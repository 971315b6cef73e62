//! Filtrations that stop refining somewhere: detection of the frozen
//! intervals and the limits of dual B-splines on them.
//!
//! A finite run cannot see accumulation points, only atoms that have not
//! been split for a while. The classifier below is therefore a heuristic
//! ("frozen so far"), and every report says so.

use serde::Serialize;

use crate::bspline::SplineSpace1D;
use crate::error::{Error, Result};
use crate::filtration::{Filtration1D, Interval, Partition1D, TensorFiltration};
use crate::projector::{GramSystem, DEFAULT_SAMPLES_PER_ATOM};

pub const FROZEN_NOTE: &str =
    "intervals are frozen over the last levels of a finite run; accumulation points beyond the run are not visible";

/// How an endpoint of a frozen interval is reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// The endpoint is an endpoint of the domain.
    DomainEdge,
    /// Breakpoints keep accumulating at the endpoint from outside.
    Accumulating,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VInterval {
    pub lo: f64,
    pub hi: f64,
    /// Final-level atoms `first_atom..=last_atom` make up the interval.
    pub first_atom: usize,
    pub last_atom: usize,
    pub left: Boundary,
    pub right: Boundary,
    /// Breakpoints never approach from inside within a finite run.
    pub approached_from_inside: bool,
    /// Some atom width lies within a factor two of the tolerance.
    pub ambiguous: bool,
}

impl VInterval {
    pub fn interval(&self) -> Interval {
        Interval {
            lo: self.lo,
            hi: self.hi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VSetReport {
    pub tolerance: f64,
    pub lookback: usize,
    pub intervals: Vec<VInterval>,
    pub note: &'static str,
}

fn has_atom(p: &Partition1D, lo: f64, hi: f64) -> bool {
    let bp = p.breakpoints();
    let i = bp.partition_point(|&b| b < lo);
    i + 1 < bp.len() && bp[i] == lo && bp[i + 1] == hi
}

/// Frozen intervals of the last level: maximal runs of atoms at least
/// `tolerance` wide that already were atoms `lookback` levels earlier.
pub fn detect_v_sets(f1: &Filtration1D, tolerance: f64, lookback: usize) -> Result<VSetReport> {
    if !(tolerance > 0.0) || lookback == 0 {
        return Err(Error::InvalidParameter(
            "tolerance must be positive and lookback at least one level".into(),
        ));
    }
    let depth = f1.depth();
    let last = f1.level(depth)?;
    let from = depth.saturating_sub(lookback).max(1);
    let frozen: Vec<bool> = (0..last.num_atoms())
        .map(|j| {
            let a = last.atom(j);
            a.width() >= tolerance
                && depth > from
                && (from..depth).all(|n| has_atom(f1.level(n).expect("level in range"), a.lo, a.hi))
        })
        .collect();
    let dom = last.domain();
    let mut intervals = Vec::new();
    let mut j = 0;
    while j < frozen.len() {
        if !frozen[j] {
            j += 1;
            continue;
        }
        let start = j;
        while j + 1 < frozen.len() && frozen[j + 1] {
            j += 1;
        }
        let (lo, hi) = (last.atom(start).lo, last.atom(j).hi);
        let ambiguous = (start..=j).any(|a| last.width(a) < 2.0 * tolerance);
        intervals.push(VInterval {
            lo,
            hi,
            first_atom: start,
            last_atom: j,
            left: if lo == dom.lo { Boundary::DomainEdge } else { Boundary::Accumulating },
            right: if hi == dom.hi { Boundary::DomainEdge } else { Boundary::Accumulating },
            approached_from_inside: false,
            ambiguous,
        });
        j += 1;
    }
    Ok(VSetReport {
        tolerance,
        lookback,
        intervals,
        note: FROZEN_NOTE,
    })
}

/// Index of the first B-spline whose support meets `(lo, hi)`.
fn first_meeting(space: &SplineSpace1D, v: &Interval) -> Option<usize> {
    (0..space.dim()).find(|&i| {
        let s = space.support(i).expect("index in range");
        s.lo < v.hi && v.lo < s.hi
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayCheck {
    /// Atom distance from `A(y)` to the support of the limiting basis
    /// function at the deepest level.
    pub distance: usize,
    pub scaled_value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitDualTable {
    pub k: Vec<usize>,
    pub r: Vec<usize>,
    pub probes: Vec<Vec<f64>>,
    /// Global dual index per level and axis (`None` where the basis misses V).
    pub index: Vec<Vec<Option<usize>>>,
    /// `values[n - 1][p]`: dual value at probe `p` on level `n`.
    pub values: Vec<Vec<f64>>,
    /// `deltas[n - 1] = max_p |values[n][p] - values[n - 1][p]|`.
    pub deltas: Vec<f64>,
    pub q_hat: f64,
    pub c_hat: f64,
    pub decay: Vec<DecayCheck>,
}

impl LimitDualTable {
    pub fn final_delta(&self) -> f64 {
        *self.deltas.last().unwrap_or(&f64::NAN)
    }

    /// First level from which the deltas never increase.
    pub fn settled_from(&self) -> usize {
        let mut from = self.deltas.len();
        while from > 0 && (from == self.deltas.len() || self.deltas[from - 1] >= self.deltas[from]) {
            from -= 1;
        }
        from + 1
    }

    pub fn decay_holds(&self) -> bool {
        self.decay.iter().all(|c| c.scaled_value <= c.bound)
    }
}

struct AxisDuals {
    index: Vec<Option<usize>>,
    values: Vec<Vec<f64>>,
    /// Deepest-level data for the decay check.
    grams: GramSystem,
    q_hat: f64,
    c_hat: f64,
}

fn axis_duals(f1: &Filtration1D, v: &Interval, k: usize, r: usize, coords: &[f64]) -> Result<AxisDuals> {
    let depth = f1.depth();
    let mut index = Vec::with_capacity(depth);
    let mut values = Vec::with_capacity(depth);
    let mut last = None;
    for n in 1..=depth {
        let space = SplineSpace1D::new(f1.level(n)?.clone(), k)?;
        let gs = GramSystem::new(space)?;
        let idx = first_meeting(gs.space(), v).map(|i| i + r).filter(|&i| {
            i < gs.dim() && {
                let s = gs.space().support(i).expect("index in range");
                s.lo < v.hi && v.lo < s.hi
            }
        });
        let row = match idx {
            Some(i) => coords.iter().map(|&y| gs.dual_eval(i, y)).collect::<Result<Vec<_>>>()?,
            None => vec![f64::NAN; coords.len()],
        };
        index.push(idx);
        values.push(row);
        last = Some(gs);
    }
    let grams = last.expect("depth >= 1");
    if index[depth - 1].is_none() {
        return Err(Error::BasisMissesInterval { index: r });
    }
    let (q_hat, c_hat) = match grams.decay_profile(DEFAULT_SAMPLES_PER_ATOM) {
        Ok(p) => (p.q_hat, p.c_hat),
        Err(Error::SpaceTooSmall { .. }) => (0.0, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(AxisDuals {
        index,
        values,
        grams,
        q_hat,
        c_hat,
    })
}

/// Limit dual B-spline `N*_r` (index counted from the first basis function
/// meeting `V`) sampled on every level of a 1D filtration.
pub fn limit_dual_table(
    f1: &Filtration1D,
    v: &VInterval,
    k: usize,
    r: usize,
    probes: &[f64],
) -> Result<LimitDualTable> {
    let t = TensorFiltration::new(vec![f1.clone()])?;
    let pts: Vec<Vec<f64>> = probes.iter().map(|&y| vec![y]).collect();
    limit_dual_table_tensor(&t, std::slice::from_ref(v), &[k], &[r], &pts)
}

/// Tensor version: the dual is the product of the axis duals.
pub fn limit_dual_table_tensor(
    f: &TensorFiltration,
    vs: &[VInterval],
    orders: &[usize],
    rs: &[usize],
    probes: &[Vec<f64>],
) -> Result<LimitDualTable> {
    let d = f.dim();
    if vs.len() != d || orders.len() != d || rs.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: vs.len().min(orders.len()).min(rs.len()),
        });
    }
    for y in probes {
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: y.len(),
            });
        }
        if !vs.iter().zip(y).all(|(v, &c)| v.interval().contains(c)) {
            return Err(Error::OutsideDomain { x: y.clone() });
        }
    }
    let axes: Vec<AxisDuals> = (0..d)
        .map(|l| {
            let coords: Vec<f64> = probes.iter().map(|y| y[l]).collect();
            axis_duals(f.axis(l), &vs[l].interval(), orders[l], rs[l], &coords)
        })
        .collect::<Result<_>>()?;
    let depth = f.depth();
    let values: Vec<Vec<f64>> = (0..depth)
        .map(|n| {
            (0..probes.len())
                .map(|p| axes.iter().map(|a| a.values[n][p]).product())
                .collect()
        })
        .collect();
    let deltas: Vec<f64> = values
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (b - a).abs())
                .fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v) })
        })
        .collect();
    // decay estimate at the deepest level, per axis constants multiplied
    let q_hat = axes.iter().map(|a| a.q_hat).fold(0.0, f64::max);
    let c_hat: f64 = axes.iter().map(|a| a.c_hat).product();
    let mut decay = Vec::with_capacity(probes.len());
    for (p, y) in probes.iter().enumerate() {
        let mut dist = 0;
        let mut hull = 1.0;
        for (l, a) in axes.iter().enumerate() {
            let space = a.grams.space();
            let i = a.index[depth - 1].expect("checked above");
            let (lo, hi) = space.support_atoms(i)?;
            let j = space.partition().locate(y[l])?;
            dist += if j < lo { lo - j } else { j.saturating_sub(hi) };
            hull *= space.partition().hull_width(lo.min(j), hi.max(j));
        }
        decay.push(DecayCheck {
            distance: dist,
            scaled_value: values[depth - 1][p].abs() * hull,
            bound: c_hat * q_hat.powi(dist as i32),
        });
    }
    Ok(LimitDualTable {
        k: orders.to_vec(),
        r: rs.to_vec(),
        probes: probes.to_vec(),
        index: (0..depth).map(|n| axes.iter().map(|a| a.index[n]).collect()).collect(),
        values,
        deltas,
        q_hat,
        c_hat,
        decay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::{build_filtration, FiltrationSpec, RefinementRule};

    fn frozen(intervals: Vec<[f64; 2]>, depth: usize) -> TensorFiltration {
        build_filtration(&FiltrationSpec::new(
            1,
            [0.0, 1.0],
            depth,
            RefinementRule::FrozenOnSubinterval { frozen: intervals },
            0,
        ))
        .unwrap()
    }

    #[test]
    fn dyadic_has_no_frozen_intervals() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 8)).unwrap();
        let rep = detect_v_sets(f.axis(0), 1e-6, 3).unwrap();
        assert!(rep.intervals.is_empty());
    }

    #[test]
    fn frozen_half_is_detected() {
        let f = frozen(vec![[0.5, 1.0]], 8);
        let rep = detect_v_sets(f.axis(0), 1e-6, 3).unwrap();
        assert_eq!(rep.intervals.len(), 1);
        let v = &rep.intervals[0];
        assert_eq!((v.lo, v.hi), (0.5, 1.0));
        assert_eq!(v.left, Boundary::Accumulating);
        assert_eq!(v.right, Boundary::DomainEdge);
        assert!(!v.approached_from_inside);
    }

    #[test]
    fn two_islands() {
        let f = frozen(vec![[0.125, 0.25], [0.5, 0.75]], 7);
        let rep = detect_v_sets(f.axis(0), 1e-6, 3).unwrap();
        let got: Vec<(f64, f64)> = rep.intervals.iter().map(|v| (v.lo, v.hi)).collect();
        assert_eq!(got, vec![(0.125, 0.25), (0.5, 0.75)]);
        assert!(rep.intervals.iter().all(|v| v.left == Boundary::Accumulating && v.right == Boundary::Accumulating));
    }

    #[test]
    fn constant_filtration_limit_is_exact() {
        let p = Partition1D::new(vec![0.0, 0.3, 0.55, 1.0]).unwrap();
        let f1 = Filtration1D::from_levels(vec![p.clone(); 4]).unwrap();
        let rep = detect_v_sets(&f1, 1e-6, 2).unwrap();
        assert_eq!(rep.intervals.len(), 1);
        let v = &rep.intervals[0];
        assert_eq!((v.lo, v.hi), (0.0, 1.0));
        let table = limit_dual_table(&f1, v, 2, 1, &[0.1, 0.4, 0.8]).unwrap();
        let gs = GramSystem::new(SplineSpace1D::new(p, 2).unwrap()).unwrap();
        for (j, &y) in [0.1, 0.4, 0.8].iter().enumerate() {
            assert_eq!(table.values[3][j], gs.dual_eval(1, y).unwrap());
        }
        assert!(table.deltas.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn missing_basis_is_an_error() {
        let f = frozen(vec![[0.5, 1.0]], 4);
        let rep = detect_v_sets(f.axis(0), 1e-6, 2).unwrap();
        assert!(matches!(
            limit_dual_table(f.axis(0), &rep.intervals[0], 2, 10, &[0.7]),
            Err(Error::BasisMissesInterval { .. })
        ));
    }
}
