//! Finitely additive measures on the atom algebra, stored as an integrable
//! density plus a finite list of point masses.
//!
//! The Lebesgue split is explicit in this representation: the density is the
//! absolutely continuous part and the point masses are the singular part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtration::{flat_index, unflat_index, AtomIndex, AtomSet, Rect, TensorFiltration};
use crate::quadrature::{GaussLegendre, NONPOLY_POINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    /// Exponent per axis.
    pub powers: Vec<u32>,
}

/// Catalog of densities (and test functions) `I^d -> R^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Density {
    Zero,
    Constant { value: f64 },
    Polynomial { terms: Vec<Monomial> },
    /// `scale * prod_l cos(freq_l x_l + phase_l)`.
    TensorCosine {
        freq: Vec<f64>,
        #[serde(default)]
        phase: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { center: Vec<f64>, width: f64, #[serde(default = "one")] scale: f64 },
    /// Steep sigmoid `1 / (1 + exp(-(normal . x - offset) / width))`.
    Sigmoid { normal: Vec<f64>, offset: f64, width: f64 },
    /// `scale * |x - center|^(-alpha)`; integrable when `alpha * d < 1`.
    PowerSingularity { center: Vec<f64>, alpha: f64, #[serde(default = "one")] scale: f64 },
    /// Piecewise constant in one coordinate: `values[j]` on
    /// `(breaks[j-1], breaks[j]]` with `breaks` sorted.
    Step { axis: usize, breaks: Vec<f64>, values: Vec<f64> },
    /// Euclidean norm of another (vector) density.
    Norm { of: Box<Density> },
    /// `R^m`-valued density with scalar components.
    Components { parts: Vec<Density> },
}

fn one() -> f64 {
    1.0
}

impl Density {
    pub fn value_dim(&self) -> usize {
        match self {
            Density::Components { parts } => parts.len(),
            _ => 1,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Density::Zero => true,
            Density::Constant { value } => *value == 0.0,
            Density::Components { parts } => parts.iter().all(Density::is_zero),
            _ => false,
        }
    }

    /// Largest per-axis polynomial degree, or `None` if not a polynomial.
    pub fn polynomial_degree(&self) -> Option<u32> {
        match self {
            Density::Zero | Density::Constant { .. } => Some(0),
            Density::Polynomial { terms } => Some(
                terms
                    .iter()
                    .flat_map(|t| t.powers.iter().copied())
                    .max()
                    .unwrap_or(0),
            ),
            Density::Components { parts } => parts
                .iter()
                .map(Density::polynomial_degree)
                .try_fold(0, |acc, d| d.map(|d| acc.max(d))),
            _ => None,
        }
    }

    /// Gauss points per atom for integrating this density against splines
    /// of order `k`: exact for polynomials, the fixed rule otherwise.
    pub fn quadrature_points(&self, k: usize) -> usize {
        match self.polynomial_degree() {
            Some(deg) => (deg as usize + k).div_ceil(2).max(1),
            None => NONPOLY_POINTS,
        }
    }

    pub fn scalar(&self, x: &[f64]) -> f64 {
        match self {
            Density::Zero => 0.0,
            Density::Constant { value } => *value,
            Density::Polynomial { terms } => terms
                .iter()
                .map(|t| {
                    t.coef
                        * t.powers
                            .iter()
                            .zip(x)
                            .map(|(&p, &v)| v.powi(p as i32))
                            .product::<f64>()
                })
                .sum(),
            Density::TensorCosine { freq, phase, scale } => {
                scale
                    * x.iter()
                        .enumerate()
                        .map(|(l, &v)| (freq[l] * v + phase.get(l).copied().unwrap_or(0.0)).cos())
                        .product::<f64>()
            }
            Density::Gaussian { center, width, scale } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                scale * (-r2 / (2.0 * width * width)).exp()
            }
            Density::Sigmoid { normal, offset, width } => {
                let s: f64 = x.iter().zip(normal).map(|(a, b)| a * b).sum();
                1.0 / (1.0 + (-(s - offset) / width).exp())
            }
            Density::PowerSingularity { center, alpha, scale } => {
                let r: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                scale * r.powf(-alpha)
            }
            Density::Step { axis, breaks, values } => {
                let v = x[*axis];
                let j = breaks.partition_point(|&b| b < v);
                values[j.min(values.len() - 1)]
            }
            Density::Norm { of } => {
                let mut buf = vec![0.0; of.value_dim()];
                of.eval(x, &mut buf);
                buf.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            Density::Components { parts } => parts[0].scalar(x),
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Density::Components { parts } => {
                for (o, p) in out.iter_mut().zip(parts) {
                    *o = p.scalar(x);
                }
            }
            _ => out[0] = self.scalar(x),
        }
    }

    pub fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.value_dim()];
        self.eval(x, &mut out);
        out
    }

    /// `int_R density` by tensor Gauss quadrature with `g` points per axis.
    pub fn integrate_rect(&self, rect: &Rect, g: usize) -> Vec<f64> {
        let m = self.value_dim();
        let mut out = vec![0.0; m];
        if self.is_zero() {
            return out;
        }
        let rule = GaussLegendre::new(g).expect("g >= 1");
        let axes: Vec<Vec<(f64, f64)>> = rect
            .sides
            .iter()
            .map(|s| rule.mapped(s.lo, s.hi).collect())
            .collect();
        let d = axes.len();
        let counts: Vec<usize> = axes.iter().map(Vec::len).collect();
        let total: usize = counts.iter().product();
        let mut x = vec![0.0; d];
        let mut buf = vec![0.0; m];
        for flat in 0..total {
            let idx = unflat_index(&counts, flat);
            let mut w = 1.0;
            for l in 0..d {
                let (xv, wv) = axes[l][idx[l]];
                x[l] = xv;
                w *= wv;
            }
            self.eval(&x, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += w * b;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dirac {
    pub location: Vec<f64>,
    pub mass: Vec<f64>,
}

/// Which sets point masses are attributed to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosureMode {
    /// Half-open atoms `(lo, hi]`.
    #[default]
    Open,
    /// Closed atoms `[lo, hi]`; a mass on a shared face counts in every
    /// adjacent closure (up to `2^d` of them).
    Closed,
}

/// Density part plus point masses, `R^m`-valued.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridMeasure {
    dim: usize,
    value_dim: usize,
    density: Density,
    diracs: Vec<Dirac>,
    /// Gauss points per atom and axis used for the density; `None` picks
    /// an exact rule for polynomial densities and the fixed 16-point rule
    /// otherwise.
    #[serde(default)]
    quad_points: Option<usize>,
}

pub type MeasureValue = Vec<f64>;

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl HybridMeasure {
    pub fn new(dim: usize, density: Density, diracs: Vec<Dirac>) -> Result<Self> {
        let value_dim = if density.is_zero() && !diracs.is_empty() {
            diracs[0].mass.len()
        } else {
            density.value_dim()
        };
        if dim == 0 || value_dim == 0 {
            return Err(Error::InvalidParameter("dimensions must be positive".into()));
        }
        if let Density::Zero = density {
        } else if density.value_dim() != value_dim {
            return Err(Error::DimensionMismatch {
                expected: value_dim,
                found: density.value_dim(),
            });
        }
        for dr in &diracs {
            if dr.location.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: dr.location.len(),
                });
            }
            if dr.mass.len() != value_dim {
                return Err(Error::DimensionMismatch {
                    expected: value_dim,
                    found: dr.mass.len(),
                });
            }
            if dr.mass.iter().chain(&dr.location).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite point mass".into()));
            }
        }
        Ok(Self {
            dim,
            value_dim,
            density,
            diracs,
            quad_points: None,
        })
    }

    pub fn absolutely_continuous(dim: usize, density: Density) -> Result<Self> {
        Self::new(dim, density, vec![])
    }

    pub fn point_mass(location: Vec<f64>, mass: f64) -> Result<Self> {
        Self::new(location.len(), Density::Zero, vec![Dirac { location, mass: vec![mass] }])
    }

    pub fn with_quad_points(mut self, g: usize) -> Self {
        self.quad_points = Some(g.max(1));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn diracs(&self) -> &[Dirac] {
        &self.diracs
    }

    /// Gauss points per atom and axis for the density integrals.
    pub fn quad_points(&self) -> usize {
        self.quad_points.unwrap_or_else(|| match self.density.polynomial_degree() {
            Some(deg) => (deg as usize + 1).div_ceil(2).max(1),
            None => NONPOLY_POINTS,
        })
    }

    /// Gauss points for loading projections of order `k` (max over axes).
    pub fn projection_quad_points(&self, k: usize) -> usize {
        self.quad_points
            .unwrap_or_else(|| self.density.quadrature_points(k))
    }

    pub fn check_inside(&self, f: &TensorFiltration) -> Result<()> {
        let dom = f.domain();
        for d in &self.diracs {
            if !dom.contains(&d.location) {
                return Err(Error::OutsideDomain { x: d.location.clone() });
            }
        }
        Ok(())
    }

    /// `theta(A)` for a rectangle; with `Closed`, point masses on the
    /// boundary are counted.
    pub fn measure_of_rect(&self, rect: &Rect, mode: ClosureMode) -> MeasureValue {
        let mut v = self.density.integrate_rect(rect, self.quad_points());
        if v.len() != self.value_dim {
            v = vec![0.0; self.value_dim];
        }
        for d in &self.diracs {
            let inside = match mode {
                ClosureMode::Open => rect.contains(&d.location),
                ClosureMode::Closed => rect.contains_closed(&d.location),
            };
            if inside {
                for (a, b) in v.iter_mut().zip(&d.mass) {
                    *a += b;
                }
            }
        }
        v
    }

    pub fn measure_of_atom(
        &self,
        f: &TensorFiltration,
        n: usize,
        i: &AtomIndex,
        mode: ClosureMode,
    ) -> Result<MeasureValue> {
        Ok(self.measure_of_rect(&f.rect(n, i)?, mode))
    }

    /// `theta` of a union of atoms (of the closure of the union in `Closed`
    /// mode, each point mass counted once).
    pub fn measure_of_set(&self, f: &TensorFiltration, set: &AtomSet, mode: ClosureMode) -> Result<MeasureValue> {
        let mut v = vec![0.0; self.value_dim];
        let rects: Vec<Rect> = set
            .members()
            .map(|i| f.rect(set.level(), &i))
            .collect::<Result<_>>()?;
        if !self.density.is_zero() {
            for r in &rects {
                for (a, b) in v.iter_mut().zip(self.density.integrate_rect(r, self.quad_points())) {
                    *a += b;
                }
            }
        }
        for d in &self.diracs {
            let hit = rects.iter().any(|r| match mode {
                ClosureMode::Open => r.contains(&d.location),
                ClosureMode::Closed => r.contains_closed(&d.location),
            });
            if hit {
                for (a, b) in v.iter_mut().zip(&d.mass) {
                    *a += b;
                }
            }
        }
        Ok(v)
    }

    /// Values on every atom of every level, `out[n-1][flat atom][component]`.
    /// The density is integrated once on the finest level and summed up the
    /// hierarchy, so finite additivity holds exactly across levels.
    pub fn atom_values_all_levels(&self, f: &TensorFiltration, mode: ClosureMode) -> Result<Vec<Vec<Vec<f64>>>> {
        if f.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: f.dim(),
            });
        }
        let depth = f.depth();
        let m = self.value_dim;
        let fine_shape = f.shape(depth)?;
        let fine_total: usize = fine_shape.iter().product();
        let fine_density: Vec<Vec<f64>> = if self.density.is_zero() {
            vec![vec![0.0; m]; fine_total]
        } else {
            let g = self.quad_points();
            use rayon::prelude::*;
            (0..fine_total)
                .into_par_iter()
                .map(|k| {
                    let idx = AtomIndex(unflat_index(&fine_shape, k));
                    let r = f.rect(depth, &idx).expect("valid index");
                    self.density.integrate_rect(&r, g)
                })
                .collect()
        };
        let mut out = Vec::with_capacity(depth);
        for n in 1..=depth {
            let shape = f.shape(n)?;
            let total: usize = shape.iter().product();
            let mut vals = vec![vec![0.0; m]; total];
            let maps = f.parent_maps(depth, n)?;
            for (k, dv) in fine_density.iter().enumerate() {
                let idx = unflat_index(&fine_shape, k);
                let parent: Vec<usize> = idx.iter().zip(&maps).map(|(&j, mp)| mp[j]).collect();
                let p = flat_index(&shape, &parent);
                for (a, b) in vals[p].iter_mut().zip(dv) {
                    *a += b;
                }
            }
            let parts = f.partitions(n)?;
            for d in &self.diracs {
                for idx in dirac_atoms(&parts, &d.location, mode) {
                    let p = flat_index(&shape, &idx);
                    for (a, b) in vals[p].iter_mut().zip(&d.mass) {
                        *a += b;
                    }
                }
            }
            out.push(vals);
        }
        Ok(out)
    }

    /// Scalar variation measure `|theta|`: density `|g|`, masses `|m|`.
    pub fn variation(&self) -> HybridMeasure {
        let density = if self.density.is_zero() {
            Density::Zero
        } else {
            match &self.density {
                Density::Constant { value } => Density::Constant { value: value.abs() },
                other => Density::Norm {
                    of: Box::new(other.clone()),
                },
            }
        };
        HybridMeasure {
            dim: self.dim,
            value_dim: 1,
            density,
            diracs: self
                .diracs
                .iter()
                .map(|d| Dirac {
                    location: d.location.clone(),
                    mass: vec![euclidean_norm(&d.mass)],
                })
                .collect(),
            quad_points: Some(self.quad_points.unwrap_or(NONPOLY_POINTS)),
        }
    }

    pub fn total_variation(&self, f: &TensorFiltration, n: usize) -> Result<TotalVariation> {
        let parts = f.partitions(n)?;
        let shape = f.shape(n)?;
        let total: usize = shape.iter().product();
        let g = self.quad_points.unwrap_or(NONPOLY_POINTS);
        let norm_density = Density::Norm {
            of: Box::new(self.density.clone()),
        };
        let mut partition_sum = 0.0;
        let mut density_norm = 0.0;
        for k in 0..total {
            let idx = AtomIndex(unflat_index(&shape, k));
            let rect = Rect {
                sides: parts.iter().zip(&idx.0).map(|(p, &j)| p.atom(j)).collect(),
            };
            partition_sum += euclidean_norm(&self.measure_of_rect(&rect, ClosureMode::Open));
            if !self.density.is_zero() {
                density_norm += norm_density.integrate_rect(&rect, g)[0];
            }
        }
        let exact = density_norm + self.diracs.iter().map(|d| euclidean_norm(&d.mass)).sum::<f64>();
        Ok(TotalVariation {
            partition_sum,
            exact,
            quad_points: g,
        })
    }

    /// Lebesgue decomposition: (absolutely continuous part, singular part).
    pub fn lebesgue_parts(&self) -> (HybridMeasure, HybridMeasure) {
        let mut ac = self.clone();
        ac.diracs.clear();
        let mut sing = self.clone();
        sing.density = Density::Zero;
        (ac, sing)
    }

    /// Mutual-singularity witness at level `n`: the union `D` of atoms
    /// holding point masses; returns `(lambda(D), |nu_s|(D^c))`.
    pub fn singular_witness(&self, f: &TensorFiltration, n: usize) -> Result<(f64, f64)> {
        let locs: Vec<Vec<f64>> = self.diracs.iter().map(|d| d.location.clone()).collect();
        let set = AtomSet::containing_points(f, n, &locs)?;
        let vol = set.volume(f)?;
        let outside: f64 = self
            .diracs
            .iter()
            .filter(|d| {
                let (i, _) = f.atom_of(n, &d.location).expect("checked above");
                !set.contains(&i)
            })
            .map(|d| euclidean_norm(&d.mass))
            .sum();
        Ok((vol, outside))
    }
}

/// Atom indices (per axis) holding a point mass at `x`.
fn dirac_atoms(parts: &[&crate::filtration::Partition1D], x: &[f64], mode: ClosureMode) -> Vec<Vec<usize>> {
    let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(parts.len());
    for (p, &v) in parts.iter().zip(x) {
        let Ok(j) = p.locate(v) else {
            // the left end of the domain belongs to the first closed atom
            if mode == ClosureMode::Closed && v == p.domain().lo {
                per_axis.push(vec![0]);
                continue;
            }
            return vec![];
        };
        let mut cands = vec![j];
        if mode == ClosureMode::Closed && v == p.atom(j).hi && j + 1 < p.num_atoms() {
            cands.push(j + 1);
        }
        per_axis.push(cands);
    }
    let mut out = vec![vec![]];
    for c in per_axis {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                c.iter().map(move |&j| {
                    let mut p = prefix.clone();
                    p.push(j);
                    p
                })
            })
            .collect();
    }
    out
}

/// Partition sum `sum_A |theta(A)|` and the exact variation of the hybrid
/// representation `int |g| + sum |m|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TotalVariation {
    pub partition_sum: f64,
    pub exact: f64,
    pub quad_points: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::{build_filtration, FiltrationSpec, Interval};

    fn mixed() -> HybridMeasure {
        HybridMeasure::new(
            1,
            Density::Constant { value: 1.0 },
            vec![Dirac {
                location: vec![0.3],
                mass: vec![2.0],
            }],
        )
        .unwrap()
    }

    fn rect1(lo: f64, hi: f64) -> Rect {
        Rect {
            sides: vec![Interval { lo, hi }],
        }
    }

    #[test]
    fn atoms_of_mixed_measure() {
        let th = mixed();
        assert!((th.measure_of_rect(&rect1(0.0, 0.5), ClosureMode::Open)[0] - 2.5).abs() < 1e-15);
        assert!((th.measure_of_rect(&rect1(0.5, 1.0), ClosureMode::Open)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn boundary_mass_counted_in_both_closures() {
        let th = HybridMeasure::point_mass(vec![0.5], 1.0).unwrap();
        assert_eq!(th.measure_of_rect(&rect1(0.0, 0.5), ClosureMode::Closed)[0], 1.0);
        assert_eq!(th.measure_of_rect(&rect1(0.5, 1.0), ClosureMode::Closed)[0], 1.0);
        assert_eq!(th.measure_of_rect(&rect1(0.5, 1.0), ClosureMode::Open)[0], 0.0);
        let f = build_filtration(&FiltrationSpec::dyadic(2, 2)).unwrap();
        let corner = HybridMeasure::point_mass(vec![0.5, 0.5], 1.0).unwrap();
        let vals = corner.atom_values_all_levels(&f, ClosureMode::Closed).unwrap();
        let hits: f64 = vals[1].iter().map(|v| v[0]).sum();
        assert_eq!(hits, 4.0);
    }

    #[test]
    fn total_variation_examples() {
        let f = build_filtration(&FiltrationSpec::dyadic(1, 3)).unwrap();
        let pos = HybridMeasure::absolutely_continuous(
            1,
            Density::Polynomial {
                terms: vec![Monomial { coef: 3.0, powers: vec![2] }],
            },
        )
        .unwrap();
        for n in 1..=3 {
            let tv = pos.total_variation(&f, n).unwrap();
            assert!((tv.partition_sum - 1.0).abs() < 1e-14);
        }
        let dirac = HybridMeasure::point_mass(vec![0.7], 2.0).unwrap();
        for n in 1..=3 {
            let tv = dirac.total_variation(&f, n).unwrap();
            assert_eq!((tv.partition_sum, tv.exact), (2.0, 2.0));
        }
        let signed = HybridMeasure::absolutely_continuous(
            1,
            Density::Step {
                axis: 0,
                breaks: vec![0.5],
                values: vec![1.0, -1.0],
            },
        )
        .unwrap();
        let tv = signed.total_variation(&f, 1).unwrap();
        assert!((tv.partition_sum - 1.0).abs() < 1e-14);
        assert!((tv.exact - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lebesgue_split() {
        let (ac, s) = mixed().lebesgue_parts();
        assert!(ac.diracs().is_empty());
        assert!(s.density().is_zero());
        let (ac2, s2) = HybridMeasure::point_mass(vec![0.2], 1.0).unwrap().lebesgue_parts();
        assert!(ac2.density().is_zero() && ac2.diracs().is_empty());
        assert_eq!(s2.diracs().len(), 1);
        let (ac3, s3) = HybridMeasure::absolutely_continuous(1, Density::Constant { value: 2.0 })
            .unwrap()
            .lebesgue_parts();
        assert!(s3.diracs().is_empty() && s3.density().is_zero());
        assert_eq!(ac3.density(), &Density::Constant { value: 2.0 });
    }

    #[test]
    fn singular_witness_shrinks() {
        let f = build_filtration(&FiltrationSpec::dyadic(2, 6)).unwrap();
        let th = HybridMeasure::new(
            2,
            Density::Zero,
            vec![
                Dirac { location: vec![0.3, 0.3], mass: vec![1.0] },
                Dirac { location: vec![0.71, 0.2], mass: vec![-0.5] },
            ],
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for n in 1..=6 {
            let (vol, outside) = th.singular_witness(&f, n).unwrap();
            assert_eq!(outside, 0.0);
            assert!(vol <= prev);
            prev = vol;
        }
        assert!(prev <= 2.0 / 4096.0 + 1e-15);
    }

    #[test]
    fn vector_valued_components() {
        let th = HybridMeasure::new(
            1,
            Density::Components {
                parts: vec![Density::Constant { value: 1.0 }, Density::Zero],
            },
            vec![Dirac { location: vec![0.9], mass: vec![0.0, 3.0] }],
        )
        .unwrap();
        let v = th.measure_of_rect(&rect1(0.5, 1.0), ClosureMode::Open);
        assert!((v[0] - 0.5).abs() < 1e-15 && v[1] == 3.0);
        assert!(HybridMeasure::new(1, Density::Constant { value: 1.0 }, vec![Dirac { location: vec![0.1], mass: vec![1.0, 2.0] }]).is_err());
    }
}
