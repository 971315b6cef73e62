//! Nested interval partitions of `(a, b]` and their tensor products.
//!
//! Atoms are half-open, `lo < x <= hi`. Levels are numbered from 1 (the
//! first refinement of the trivial partition); atom indices are 0-based per
//! axis and flattened row-major (last axis fastest) where a flat index is
//! needed.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest atom width produced by refinement, relative to `|I|`.
pub const MIN_ATOM_WIDTH_REL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Half-open membership `lo < x <= hi`.
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    pub fn contains_closed(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

/// Axis-parallel half-open rectangle `prod (lo_l, hi_l]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub sides: Vec<Interval>,
}

impl Rect {
    pub fn volume(&self) -> f64 {
        self.sides.iter().map(Interval::width).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.sides.len() && self.sides.iter().zip(x).all(|(s, &v)| s.contains(v))
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        x.len() == self.sides.len() && self.sides.iter().zip(x).all(|(s, &v)| s.contains_closed(v))
    }

    /// Smallest axis-parallel rectangle containing both.
    pub fn hull(&self, other: &Rect) -> Rect {
        Rect {
            sides: self.sides.iter().zip(&other.sides).map(|(a, b)| a.hull(b)).collect(),
        }
    }
}

/// Per-axis atom positions of a tensor atom.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomIndex(pub Vec<usize>);

impl AtomIndex {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for AtomIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Row-major flat index of `idx` in a grid of the given shape.
pub fn flat_index(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

pub fn unflat_index(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for l in (0..shape.len()).rev() {
        idx[l] = flat % shape[l];
        flat /= shape[l];
    }
    idx
}

/// `sum_l |i_l - j_l|`, the atom distance at a fixed level.
pub fn l1_distance(i: &[usize], j: &[usize]) -> usize {
    i.iter().zip(j).map(|(&a, &b)| a.abs_diff(b)).sum()
}

/// Exact l1 distance transform on a grid: for every cell, the l1 distance
/// to the nearest marked cell (`usize::MAX` if nothing is marked).
pub fn l1_distance_map(shape: &[usize], marked: &[bool]) -> Vec<usize> {
    let total: usize = shape.iter().product();
    assert_eq!(marked.len(), total);
    let mut dist: Vec<usize> = marked.iter().map(|&m| if m { 0 } else { usize::MAX }).collect();
    // l1 distance is separable: 1D min-plus passes along each axis in turn.
    for axis in 0..shape.len() {
        let n = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let outer = total / (n * stride);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for i in 1..n {
                    let prev = dist[base + (i - 1) * stride].saturating_add(1);
                    let cur = &mut dist[base + i * stride];
                    if prev < *cur {
                        *cur = prev;
                    }
                }
                for i in (0..n.saturating_sub(1)).rev() {
                    let next = dist[base + (i + 1) * stride].saturating_add(1);
                    let cur = &mut dist[base + i * stride];
                    if next < *cur {
                        *cur = next;
                    }
                }
            }
        }
    }
    dist
}

/// Sorted breakpoints `t_0 < ... < t_N`; atoms `(t_{j-1}, t_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Partition1D {
    breakpoints: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Partition1D {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Partition1D::new(v)
    }
}

impl From<Partition1D> for Vec<f64> {
    fn from(p: Partition1D) -> Self {
        p.breakpoints
    }
}

impl Partition1D {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidParameter(
                "a partition needs at least two breakpoints".into(),
            ));
        }
        for w in breakpoints.windows(2) {
            Interval::new(w[0], w[1])?;
        }
        Ok(Self { breakpoints })
    }

    pub fn uniform(domain: Interval, atoms: usize) -> Result<Self> {
        if atoms == 0 {
            return Err(Error::InvalidParameter("uniform partition needs atoms >= 1".into()));
        }
        let h = domain.width() / atoms as f64;
        let mut bp: Vec<f64> = (0..=atoms).map(|j| domain.lo + j as f64 * h).collect();
        bp[atoms] = domain.hi;
        Self::new(bp)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn num_atoms(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn domain(&self) -> Interval {
        Interval {
            lo: self.breakpoints[0],
            hi: *self.breakpoints.last().unwrap(),
        }
    }

    pub fn atom(&self, j: usize) -> Interval {
        Interval {
            lo: self.breakpoints[j],
            hi: self.breakpoints[j + 1],
        }
    }

    pub fn width(&self, j: usize) -> f64 {
        self.breakpoints[j + 1] - self.breakpoints[j]
    }

    /// Index of the atom containing `x` under the half-open convention.
    pub fn locate(&self, x: f64) -> Result<usize> {
        if !self.domain().contains(x) {
            return Err(Error::OutsideDomain { x: vec![x] });
        }
        // first breakpoint >= x; x > t_0 guarantees p >= 1
        let p = self.breakpoints.partition_point(|&t| t < x);
        Ok(p - 1)
    }

    /// Width of the hull of atoms `i..=j` (in either order).
    pub fn hull_width(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.breakpoints[b + 1] - self.breakpoints[a]
    }

    /// First breakpoint of `self` missing from `finer`, if any.
    pub fn first_missing_in(&self, finer: &Partition1D) -> Option<f64> {
        let fb = finer.breakpoints();
        self.breakpoints
            .iter()
            .copied()
            .find(|t| fb.binary_search_by(|p| p.partial_cmp(t).unwrap()).is_err())
    }

    /// For each atom of `finer` (which must refine `self`), the index of the
    /// atom of `self` containing it.
    pub fn parent_map(&self, finer: &Partition1D) -> Vec<usize> {
        let mut out = Vec::with_capacity(finer.num_atoms());
        let mut p = 0;
        for j in 0..finer.num_atoms() {
            let hi = finer.breakpoints[j + 1];
            while p + 1 < self.num_atoms() && self.breakpoints[p + 1] < hi {
                p += 1;
            }
            out.push(p);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filtration1D {
    levels: Vec<Partition1D>,
}

impl Filtration1D {
    /// Levels in order, level 1 first. Nestedness is not checked here; see
    /// [`TensorFiltration::check_nested`].
    pub fn from_levels(levels: Vec<Partition1D>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter("a filtration needs at least one level".into()));
        }
        let dom = levels[0].domain();
        if levels.iter().any(|p| p.domain() != dom) {
            return Err(Error::InvalidParameter("all levels must share the same domain".into()));
        }
        Ok(Self { levels })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn domain(&self) -> Interval {
        self.levels[0].domain()
    }

    pub fn level(&self, n: usize) -> Result<&Partition1D> {
        if n == 0 || n > self.levels.len() {
            return Err(Error::LevelOutOfRange {
                level: n,
                depth: self.levels.len(),
            });
        }
        Ok(&self.levels[n - 1])
    }

    pub fn levels(&self) -> &[Partition1D] {
        &self.levels
    }

    /// Same filtration cut after `depth` levels.
    pub fn truncated(&self, depth: usize) -> Result<Self> {
        self.level(depth)?;
        Ok(Self {
            levels: self.levels[..depth].to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum RefinementRule {
    /// Every atom is bisected at every level.
    UniformBisectAll,
    /// Each atom is split with probability `split_prob`, at relative position
    /// `0.5 + jitter * u`, `u` uniform in `[-1, 1]`.
    RandomAtomBisect {
        #[serde(default = "default_split_prob")]
        split_prob: f64,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    /// Only the atom containing `target` (this axis' coordinate) is bisected.
    PointTargeted { target: f64 },
    /// Atoms inside one of the `frozen` intervals are never split; all other
    /// atoms are bisected. Frozen endpoints are breakpoints from the start.
    FrozenOnSubinterval { frozen: Vec<[f64; 2]> },
    /// A random initial partition of `base_atoms` atoms with widths drawn
    /// uniformly from `[1, spread]` (then normalized), bisected everywhere
    /// afterwards. Local mesh ratios are fixed from the first level on.
    RandomBaseBisect {
        #[serde(default = "default_base_atoms")]
        base_atoms: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_base_atoms() -> usize {
    8
}

fn default_spread() -> f64 {
    4.0
}

fn default_split_prob() -> f64 {
    0.5
}

fn default_jitter() -> f64 {
    0.25
}

impl FromStr for RefinementRule {
    type Err = Error;

    /// Rule by name with default parameters; rules that need parameters
    /// without a sensible default are rejected.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-bisect-all" => Ok(Self::UniformBisectAll),
            "random-atom-bisect" => Ok(Self::RandomAtomBisect {
                split_prob: default_split_prob(),
                jitter: default_jitter(),
            }),
            "random-base-bisect" => Ok(Self::RandomBaseBisect {
                base_atoms: default_base_atoms(),
                spread: default_spread(),
            }),
            "point-targeted" | "frozen-on-subinterval" => Err(Error::InvalidParameter(format!(
                "rule `{s}` requires parameters"
            ))),
            other => Err(Error::UnknownRule(other.to_string())),
        }
    }
}

impl RefinementRule {
    pub fn name(&self) -> &'static str {
        match self {
            Self::UniformBisectAll => "uniform-bisect-all",
            Self::RandomAtomBisect { .. } => "random-atom-bisect",
            Self::PointTargeted { .. } => "point-targeted",
            Self::FrozenOnSubinterval { .. } => "frozen-on-subinterval",
            Self::RandomBaseBisect { .. } => "random-base-bisect",
        }
    }

    fn validate(&self, domain: Interval) -> Result<()> {
        match self {
            Self::UniformBisectAll => Ok(()),
            Self::RandomAtomBisect { split_prob, jitter } => {
                if !(0.0..=1.0).contains(split_prob) || !(0.0..0.5).contains(jitter) {
                    return Err(Error::InvalidParameter(format!(
                        "random-atom-bisect needs split_prob in [0,1] and jitter in [0,0.5), got {split_prob}, {jitter}"
                    )));
                }
                Ok(())
            }
            Self::PointTargeted { target } => {
                if domain.contains(*target) {
                    Ok(())
                } else {
                    Err(Error::OutsideDomain { x: vec![*target] })
                }
            }
            Self::FrozenOnSubinterval { frozen } => {
                for f in frozen {
                    let iv = Interval::new(f[0], f[1])?;
                    if iv.lo < domain.lo || iv.hi > domain.hi {
                        return Err(Error::InvalidParameter(format!(
                            "frozen interval ({}, {}] leaves the domain",
                            iv.lo, iv.hi
                        )));
                    }
                }
                Ok(())
            }
            Self::RandomBaseBisect { base_atoms, spread } => {
                if *base_atoms == 0 || !(*spread >= 1.0) || !spread.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "random-base-bisect needs base_atoms >= 1 and spread >= 1, got {base_atoms}, {spread}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn initial_breakpoints(&self, domain: Interval, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut bp = vec![domain.lo, domain.hi];
        match self {
            Self::FrozenOnSubinterval { frozen } => {
                for f in frozen {
                    bp.extend_from_slice(f);
                }
                bp.sort_by(|a, b| a.partial_cmp(b).unwrap());
                bp.dedup();
            }
            Self::RandomBaseBisect { base_atoms, spread } => {
                let w: Vec<f64> = (0..*base_atoms).map(|_| rng.gen_range(1.0..=*spread)).collect();
                let total: f64 = w.iter().sum();
                let mut acc = 0.0;
                bp = vec![domain.lo];
                for wi in &w[..w.len() - 1] {
                    acc += wi;
                    bp.push(domain.lo + domain.width() * acc / total);
                }
                bp.push(domain.hi);
            }
            _ => {}
        }
        bp
    }

    fn refine(&self, prev: &[f64], min_width: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * prev.len());
        out.push(prev[0]);
        for w in prev.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let split = match self {
                Self::UniformBisectAll | Self::RandomBaseBisect { .. } => Some(0.5),
                Self::RandomAtomBisect { split_prob, jitter } => {
                    // draw both numbers unconditionally so the stream does
                    // not depend on earlier outcomes
                    let coin: f64 = rng.gen();
                    let u: f64 = rng.gen_range(-1.0..=1.0);
                    (coin < *split_prob).then_some(0.5 + jitter * u)
                }
                Self::PointTargeted { target } => (lo < *target && *target <= hi).then_some(0.5),
                Self::FrozenOnSubinterval { frozen } => {
                    let inside = frozen.iter().any(|f| f[0] <= lo && hi <= f[1]);
                    (!inside).then_some(0.5)
                }
            };
            if let Some(frac) = split {
                let mid = lo + frac * (hi - lo);
                if mid - lo >= min_width && hi - mid >= min_width {
                    out.push(mid);
                }
            }
            out.push(hi);
        }
        out
    }
}

/// Recipe for [`build_filtration`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiltrationSpec {
    pub dim: usize,
    pub interval: [f64; 2],
    pub depth: usize,
    pub rule: RefinementRule,
    /// Optional per-axis override of `rule`.
    #[serde(default)]
    pub axis_rules: Option<Vec<RefinementRule>>,
    #[serde(default)]
    pub seed: u64,
}

impl FiltrationSpec {
    pub fn new(dim: usize, interval: [f64; 2], depth: usize, rule: RefinementRule, seed: u64) -> Self {
        Self {
            dim,
            interval,
            depth,
            rule,
            axis_rules: None,
            seed,
        }
    }

    pub fn dyadic(dim: usize, depth: usize) -> Self {
        Self::new(dim, [0.0, 1.0], depth, RefinementRule::UniformBisectAll, 0)
    }

    fn rule_for(&self, axis: usize) -> &RefinementRule {
        match &self.axis_rules {
            Some(r) => &r[axis],
            None => &self.rule,
        }
    }
}

fn axis_seed(seed: u64, axis: usize) -> u64 {
    seed ^ (axis as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds a nested tensor filtration; deterministic for a given spec.
pub fn build_filtration(spec: &FiltrationSpec) -> Result<TensorFiltration> {
    if spec.dim == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if spec.depth == 0 {
        return Err(Error::InvalidParameter("depth must be at least 1".into()));
    }
    if let Some(r) = &spec.axis_rules {
        if r.len() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                found: r.len(),
            });
        }
    }
    let domain = Interval::new(spec.interval[0], spec.interval[1])?;
    let min_width = MIN_ATOM_WIDTH_REL * domain.width();
    let mut axes = Vec::with_capacity(spec.dim);
    for axis in 0..spec.dim {
        let rule = spec.rule_for(axis);
        rule.validate(domain)?;
        let mut rng = ChaCha8Rng::seed_from_u64(axis_seed(spec.seed, axis));
        let mut bp = rule.initial_breakpoints(domain, &mut rng);
        let mut levels = Vec::with_capacity(spec.depth);
        for _ in 0..spec.depth {
            bp = rule.refine(&bp, min_width, &mut rng);
            levels.push(Partition1D::new(bp.clone())?);
        }
        axes.push(Filtration1D::from_levels(levels)?);
    }
    TensorFiltration::new(axes)
}

/// First place where nestedness fails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NestingViolation {
    /// 0-based axis.
    pub axis: usize,
    /// The level that is missing a breakpoint of the previous level.
    pub level: usize,
    pub missing_breakpoint: f64,
}

/// `F_n = F_n^1 (x) ... (x) F_n^d`, all axes refined in lockstep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorFiltration {
    axes: Vec<Filtration1D>,
}

impl TensorFiltration {
    /// Validates equal depth and nestedness.
    pub fn new(axes: Vec<Filtration1D>) -> Result<Self> {
        let f = Self::new_unchecked(axes)?;
        if let Some(v) = f.check_nested() {
            return Err(Error::InvalidParameter(format!(
                "filtration not nested: axis {} level {} misses breakpoint {}",
                v.axis, v.level, v.missing_breakpoint
            )));
        }
        Ok(f)
    }

    /// Validates equal depth only; use [`Self::check_nested`] to diagnose.
    pub fn new_unchecked(axes: Vec<Filtration1D>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter("need at least one axis".into()));
        }
        let depth = axes[0].depth();
        if let Some(bad) = axes.iter().find(|a| a.depth() != depth) {
            return Err(Error::DimensionMismatch {
                expected: depth,
                found: bad.depth(),
            });
        }
        Ok(Self { axes })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: TensorFiltration =
            serde_json::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Self::new(raw.axes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("filtration serializes")
    }

    pub fn check_nested(&self) -> Option<NestingViolation> {
        for (axis, f) in self.axes.iter().enumerate() {
            for (n, pair) in f.levels.windows(2).enumerate() {
                if let Some(t) = pair[0].first_missing_in(&pair[1]) {
                    return Some(NestingViolation {
                        axis,
                        level: n + 2,
                        missing_breakpoint: t,
                    });
                }
            }
        }
        None
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn depth(&self) -> usize {
        self.axes[0].depth()
    }

    pub fn axis(&self, l: usize) -> &Filtration1D {
        &self.axes[l]
    }

    pub fn axes(&self) -> &[Filtration1D] {
        &self.axes
    }

    pub fn domain(&self) -> Rect {
        Rect {
            sides: self.axes.iter().map(Filtration1D::domain).collect(),
        }
    }

    pub fn check_level(&self, n: usize) -> Result<()> {
        self.axes[0].level(n).map(|_| ())
    }

    /// Per-axis partitions at level `n`.
    pub fn partitions(&self, n: usize) -> Result<Vec<&Partition1D>> {
        self.axes.iter().map(|a| a.level(n)).collect()
    }

    pub fn shape(&self, n: usize) -> Result<Vec<usize>> {
        Ok(self.partitions(n)?.iter().map(|p| p.num_atoms()).collect())
    }

    pub fn num_atoms(&self, n: usize) -> Result<usize> {
        Ok(self.shape(n)?.iter().product())
    }

    pub fn check_index(&self, n: usize, i: &AtomIndex) -> Result<()> {
        let shape = self.shape(n)?;
        if i.0.len() != shape.len() || i.0.iter().zip(&shape).any(|(&a, &s)| a >= s) {
            return Err(Error::IndexOutOfRange {
                index: i.0.clone(),
                shape,
            });
        }
        Ok(())
    }

    pub fn rect(&self, n: usize, i: &AtomIndex) -> Result<Rect> {
        self.check_index(n, i)?;
        let parts = self.partitions(n)?;
        Ok(Rect {
            sides: parts.iter().zip(&i.0).map(|(p, &j)| p.atom(j)).collect(),
        })
    }

    /// `A_n(x)`: the atom of level `n` containing `x`.
    pub fn atom_of(&self, n: usize, x: &[f64]) -> Result<(AtomIndex, Rect)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let parts = self.partitions(n)?;
        let mut idx = Vec::with_capacity(x.len());
        let mut sides = Vec::with_capacity(x.len());
        for (p, &v) in parts.iter().zip(x) {
            let j = p.locate(v).map_err(|_| Error::OutsideDomain { x: x.to_vec() })?;
            idx.push(j);
            sides.push(p.atom(j));
        }
        Ok((AtomIndex(idx), Rect { sides }))
    }

    /// `d_n(A, B) = |i - j|_1`.
    pub fn atom_distance(&self, n: usize, i: &AtomIndex, j: &AtomIndex) -> Result<usize> {
        self.check_index(n, i)?;
        self.check_index(n, j)?;
        Ok(l1_distance(&i.0, &j.0))
    }

    /// Volume of the axis-parallel hull of two atoms of level `n`.
    pub fn hull_volume(&self, n: usize, i: &AtomIndex, j: &AtomIndex) -> Result<f64> {
        self.check_index(n, i)?;
        self.check_index(n, j)?;
        let parts = self.partitions(n)?;
        Ok(parts
            .iter()
            .zip(i.0.iter().zip(&j.0))
            .map(|(p, (&a, &b))| p.hull_width(a, b))
            .product())
    }

    /// For each axis, the map from atoms of level `fine` to their ancestors at
    /// level `coarse <= fine`.
    pub fn parent_maps(&self, fine: usize, coarse: usize) -> Result<Vec<Vec<usize>>> {
        if coarse > fine {
            return Err(Error::InvalidParameter(format!(
                "coarse level {coarse} exceeds fine level {fine}"
            )));
        }
        self.axes
            .iter()
            .map(|a| Ok(a.level(coarse)?.parent_map(a.level(fine)?)))
            .collect()
    }

    /// `A_{n,s}` around a point or atom set: all atoms within l1 distance `s`.
    pub fn neighborhood(&self, n: usize, seed: &NeighborhoodSeed, s: usize) -> Result<AtomSet> {
        let base = match seed {
            NeighborhoodSeed::Point(x) => {
                let (i, _) = self.atom_of(n, x)?;
                AtomSet::from_indices(self, n, [i])?
            }
            NeighborhoodSeed::Set(set) => {
                if set.level != n || set.shape != self.shape(n)? {
                    return Err(Error::InvalidParameter(format!(
                        "atom set belongs to level {}, not {n}",
                        set.level
                    )));
                }
                set.clone()
            }
        };
        Ok(base.grow(s))
    }

    pub fn truncated(&self, depth: usize) -> Result<Self> {
        Ok(Self {
            axes: self.axes.iter().map(|a| a.truncated(depth)).collect::<Result<_>>()?,
        })
    }
}

pub enum NeighborhoodSeed {
    Point(Vec<f64>),
    Set(AtomSet),
}

/// A set of atoms of one level, stored as a mask over the flattened grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomSet {
    level: usize,
    shape: Vec<usize>,
    mask: Vec<bool>,
}

impl AtomSet {
    pub fn empty(f: &TensorFiltration, n: usize) -> Result<Self> {
        let shape = f.shape(n)?;
        let total = shape.iter().product();
        Ok(Self {
            level: n,
            shape,
            mask: vec![false; total],
        })
    }

    pub fn full(f: &TensorFiltration, n: usize) -> Result<Self> {
        let mut s = Self::empty(f, n)?;
        s.mask.iter_mut().for_each(|m| *m = true);
        Ok(s)
    }

    pub fn from_indices<I: IntoIterator<Item = AtomIndex>>(
        f: &TensorFiltration,
        n: usize,
        members: I,
    ) -> Result<Self> {
        let mut s = Self::empty(f, n)?;
        for i in members {
            f.check_index(n, &i)?;
            let k = flat_index(&s.shape, &i.0);
            s.mask[k] = true;
        }
        Ok(s)
    }

    pub fn from_mask(f: &TensorFiltration, n: usize, mask: Vec<bool>) -> Result<Self> {
        let shape = f.shape(n)?;
        let total: usize = shape.iter().product();
        if mask.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                found: mask.len(),
            });
        }
        Ok(Self { level: n, shape, mask })
    }

    /// Atoms of level `n` meeting the point set (each point's own atom).
    pub fn containing_points(f: &TensorFiltration, n: usize, points: &[Vec<f64>]) -> Result<Self> {
        let idx = points
            .iter()
            .map(|x| f.atom_of(n, x).map(|(i, _)| i))
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(f, n, idx)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, i: &AtomIndex) -> bool {
        i.0.len() == self.shape.len()
            && i.0.iter().zip(&self.shape).all(|(&a, &s)| a < s)
            && self.mask[flat_index(&self.shape, &i.0)]
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn members(&self) -> impl Iterator<Item = AtomIndex> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(k, _)| AtomIndex(unflat_index(&self.shape, k)))
    }

    pub fn is_subset_of(&self, other: &AtomSet) -> bool {
        self.shape == other.shape && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// l1 distance of every atom of the level to this set.
    pub fn distance_map(&self) -> Vec<usize> {
        l1_distance_map(&self.shape, &self.mask)
    }

    pub fn grow(&self, s: usize) -> AtomSet {
        let dist = self.distance_map();
        AtomSet {
            level: self.level,
            shape: self.shape.clone(),
            mask: dist.iter().map(|&d| d <= s).collect(),
        }
    }

    pub fn complement(&self) -> AtomSet {
        AtomSet {
            level: self.level,
            shape: self.shape.clone(),
            mask: self.mask.iter().map(|m| !m).collect(),
        }
    }

    /// Lebesgue measure of the union of members.
    pub fn volume(&self, f: &TensorFiltration) -> Result<f64> {
        let parts = f.partitions(self.level)?;
        Ok(self
            .members()
            .map(|i| parts.iter().zip(&i.0).map(|(p, &j)| p.width(j)).product::<f64>())
            .sum())
    }

    /// The same union expressed through the atoms of a finer level.
    pub fn refine_to(&self, f: &TensorFiltration, fine: usize) -> Result<AtomSet> {
        let maps = f.parent_maps(fine, self.level)?;
        let shape = f.shape(fine)?;
        let total: usize = shape.iter().product();
        let mask = (0..total)
            .map(|k| {
                let idx = unflat_index(&shape, k);
                let parent: Vec<usize> = idx.iter().zip(&maps).map(|(&j, m)| m[j]).collect();
                self.mask[flat_index(&self.shape, &parent)]
            })
            .collect();
        Ok(AtomSet { level: fine, shape, mask })
    }
}

/// Breadth-first order of a grid from a start cell; used by tests.
#[doc(hidden)]
pub fn bfs_distances(shape: &[usize], start: &[usize]) -> Vec<usize> {
    let total: usize = shape.iter().product();
    let mut dist = vec![usize::MAX; total];
    let mut queue = VecDeque::new();
    let s = flat_index(shape, start);
    dist[s] = 0;
    queue.push_back(s);
    while let Some(k) = queue.pop_front() {
        let idx = unflat_index(shape, k);
        for l in 0..shape.len() {
            for delta in [-1i64, 1] {
                let v = idx[l] as i64 + delta;
                if v < 0 || v >= shape[l] as i64 {
                    continue;
                }
                let mut nb = idx.clone();
                nb[l] = v as usize;
                let f = flat_index(shape, &nb);
                if dist[f] == usize::MAX {
                    dist[f] = dist[k] + 1;
                    queue.push_back(f);
                }
            }
        }
    }
    dist
}
