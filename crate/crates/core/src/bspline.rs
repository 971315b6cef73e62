//! Clamped B-spline bases over a single partition and their tensor products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtration::{flat_index, Interval, Partition1D};
use crate::quadrature::GaussLegendre;

/// Largest supported order; keeps basis evaluation allocation-free.
pub const MAX_ORDER: usize = 16;

/// Clamped knot vector: end breakpoints repeated `k` times, interior simple.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    order: usize,
}

impl KnotVector {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dimension(&self) -> usize {
        self.knots.len() - self.order
    }
}

pub fn knot_vector(p: &Partition1D, k: usize) -> Result<KnotVector> {
    if k == 0 || k > MAX_ORDER {
        return Err(Error::InvalidOrder(k));
    }
    let bp = p.breakpoints();
    let mut knots = Vec::with_capacity(bp.len() + 2 * (k - 1));
    knots.extend(std::iter::repeat_n(bp[0], k - 1));
    knots.extend_from_slice(bp);
    knots.extend(std::iter::repeat_n(bp[bp.len() - 1], k - 1));
    Ok(KnotVector { knots, order: k })
}

/// `S^k(p)` with its B-spline basis (a nonnegative partition of unity).
#[derive(Clone, Debug, PartialEq)]
pub struct SplineSpace1D {
    partition: Partition1D,
    knots: KnotVector,
}

impl SplineSpace1D {
    pub fn new(partition: Partition1D, k: usize) -> Result<Self> {
        let knots = knot_vector(&partition, k)?;
        Ok(Self { partition, knots })
    }

    pub fn order(&self) -> usize {
        self.knots.order
    }

    pub fn dim(&self) -> usize {
        self.partition.num_atoms() + self.order() - 1
    }

    pub fn partition(&self) -> &Partition1D {
        &self.partition
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.knots
    }

    pub fn num_atoms(&self) -> usize {
        self.partition.num_atoms()
    }

    /// Values of the `k` B-splines `N_j, ..., N_{j+k-1}` that are active on
    /// atom `j`, using that atom's polynomial piece at `x` (valid for any
    /// `x` in the closed atom).
    #[inline]
    pub fn basis_on_atom(&self, j: usize, x: f64, out: &mut [f64]) {
        let k = self.order();
        let t = &self.knots.knots;
        let mu = j + k - 1;
        let mut left = [0.0; MAX_ORDER];
        let mut right = [0.0; MAX_ORDER];
        out[0] = 1.0;
        for jj in 1..k {
            left[jj] = x - t[mu + 1 - jj];
            right[jj] = t[mu + jj] - x;
            let mut saved = 0.0;
            for r in 0..jj {
                let temp = out[r] / (right[r + 1] + left[jj - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[jj - r] * temp;
            }
            out[jj] = saved;
        }
    }

    /// Cox–de Boor evaluation: index of the first active basis function and
    /// the `k` active values at `x`.
    pub fn eval_basis(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let j = self.partition.locate(x)?;
        let mut vals = vec![0.0; self.order()];
        self.basis_on_atom(j, x, &mut vals);
        Ok((j, vals))
    }

    /// Value of the single basis function `i` at `x`.
    pub fn basis_value(&self, i: usize, x: f64) -> Result<f64> {
        self.check_index(i)?;
        let (first, vals) = self.eval_basis(x)?;
        Ok(if i >= first && i < first + vals.len() {
            vals[i - first]
        } else {
            0.0
        })
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: vec![i],
                shape: vec![self.dim()],
            });
        }
        Ok(())
    }

    /// First and last atom (inclusive) of the support of basis `i`.
    pub fn support_atoms(&self, i: usize) -> Result<(usize, usize)> {
        self.check_index(i)?;
        let k = self.order();
        Ok(((i + 1).saturating_sub(k), i.min(self.num_atoms() - 1)))
    }

    pub fn support(&self, i: usize) -> Result<Interval> {
        let (a, b) = self.support_atoms(i)?;
        Ok(Interval {
            lo: self.partition.atom(a).lo,
            hi: self.partition.atom(b).hi,
        })
    }

    /// `b_i = int f N_i` with `g` Gauss points per atom.
    pub fn integrate_against<F: Fn(f64) -> f64>(&self, f: F, g: usize) -> Result<Vec<f64>> {
        let rule = GaussLegendre::new(g)?;
        let k = self.order();
        let mut b = vec![0.0; self.dim()];
        let mut vals = [0.0; MAX_ORDER];
        for j in 0..self.num_atoms() {
            let a = self.partition.atom(j);
            for (x, w) in rule.mapped(a.lo, a.hi) {
                self.basis_on_atom(j, x, &mut vals);
                let fx = f(x) * w;
                for r in 0..k {
                    b[j + r] += fx * vals[r];
                }
            }
        }
        Ok(b)
    }

    /// `sum_i c_i N_i(x)`.
    pub fn eval_spline(&self, coeffs: &[f64], x: f64) -> Result<f64> {
        let j = self.partition.locate(x)?;
        Ok(self.eval_on_atom(coeffs, j, x))
    }

    #[inline]
    pub fn eval_on_atom(&self, coeffs: &[f64], j: usize, x: f64) -> f64 {
        let mut vals = [0.0; MAX_ORDER];
        self.basis_on_atom(j, x, &mut vals);
        (0..self.order()).map(|r| coeffs[j + r] * vals[r]).sum()
    }
}

/// `S^{k_1}(p_1) (x) ... (x) S^{k_d}(p_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpace {
    spaces: Vec<SplineSpace1D>,
}

impl TensorSpace {
    pub fn new(spaces: Vec<SplineSpace1D>) -> Result<Self> {
        if spaces.is_empty() {
            return Err(Error::InvalidParameter("tensor space needs at least one axis".into()));
        }
        Ok(Self { spaces })
    }

    pub fn from_partitions(parts: &[&Partition1D], orders: &[usize]) -> Result<Self> {
        if parts.len() != orders.len() {
            return Err(Error::DimensionMismatch {
                expected: parts.len(),
                found: orders.len(),
            });
        }
        Self::new(
            parts
                .iter()
                .zip(orders)
                .map(|(p, &k)| SplineSpace1D::new((*p).clone(), k))
                .collect::<Result<_>>()?,
        )
    }

    pub fn spaces(&self) -> &[SplineSpace1D] {
        &self.spaces
    }

    pub fn axis(&self, l: usize) -> &SplineSpace1D {
        &self.spaces[l]
    }

    pub fn dim(&self) -> usize {
        self.spaces.len()
    }

    pub fn orders(&self) -> Vec<usize> {
        self.spaces.iter().map(SplineSpace1D::order).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.spaces.iter().map(SplineSpace1D::dim).collect()
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Active windows per axis at `x`: first index and `k_l` values each.
    pub fn active(&self, x: &[f64]) -> Result<Vec<(usize, Vec<f64>)>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        self.spaces
            .iter()
            .zip(x)
            .map(|(s, &v)| s.eval_basis(v).map_err(|_| Error::OutsideDomain { x: x.to_vec() }))
            .collect()
    }

    /// Calls `visit(flat_index, weight)` for every active tensor basis
    /// function at the point described by per-axis windows.
    pub fn for_each_active<F: FnMut(usize, f64)>(&self, windows: &[(usize, Vec<f64>)], mut visit: F) {
        let shape = self.shape();
        let d = self.dim();
        let mut r = vec![0usize; d];
        let lens: Vec<usize> = windows.iter().map(|w| w.1.len()).collect();
        let mut idx = vec![0usize; d];
        loop {
            let mut w = 1.0;
            for l in 0..d {
                idx[l] = windows[l].0 + r[l];
                w *= windows[l].1[r[l]];
            }
            visit(flat_index(&shape, &idx), w);
            // odometer over the k_1 x ... x k_d window
            let mut l = d;
            loop {
                if l == 0 {
                    return;
                }
                l -= 1;
                r[l] += 1;
                if r[l] < lens[l] {
                    break;
                }
                r[l] = 0;
            }
        }
    }
}

/// A (possibly `R^m`-valued) tensor-product spline, one coefficient tensor
/// per value component.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpline {
    space: TensorSpace,
    coeffs: Vec<Vec<f64>>,
}

impl TensorSpline {
    pub fn new(space: TensorSpace, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidParameter("value dimension must be at least 1".into()));
        }
        let n = space.len();
        if let Some(bad) = coeffs.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: TensorSpace, m: usize) -> Self {
        let n = space.len();
        Self {
            space,
            coeffs: vec![vec![0.0; n]; m.max(1)],
        }
    }

    pub fn space(&self) -> &TensorSpace {
        &self.space
    }

    pub fn value_dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.coeffs
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let windows = self.space.active(x)?;
        let mut out = vec![0.0; self.value_dim()];
        self.space.for_each_active(&windows, |k, w| {
            for (o, c) in out.iter_mut().zip(&self.coeffs) {
                *o += w * c[k];
            }
        });
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SplineDocument::from(self)).expect("spline serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SplineDocument =
            serde_json::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        doc.try_into()
    }
}

/// Serialized form of a [`TensorSpline`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplineDocument {
    pub orders: Vec<usize>,
    pub breakpoints: Vec<Vec<f64>>,
    pub value_dim: usize,
    pub shape: Vec<usize>,
    /// One row-major coefficient tensor per value component.
    pub coeffs: Vec<Vec<f64>>,
}

impl From<&TensorSpline> for SplineDocument {
    fn from(s: &TensorSpline) -> Self {
        Self {
            orders: s.space.orders(),
            breakpoints: s
                .space
                .spaces
                .iter()
                .map(|a| a.partition.breakpoints().to_vec())
                .collect(),
            value_dim: s.value_dim(),
            shape: s.space.shape(),
            coeffs: s.coeffs.clone(),
        }
    }
}

impl TryFrom<SplineDocument> for TensorSpline {
    type Error = Error;
    fn try_from(doc: SplineDocument) -> Result<Self> {
        let parts = doc
            .breakpoints
            .into_iter()
            .map(Partition1D::new)
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Partition1D> = parts.iter().collect();
        let space = TensorSpace::from_partitions(&refs, &doc.orders)?;
        if space.shape() != doc.shape || doc.coeffs.len() != doc.value_dim {
            return Err(Error::InvalidParameter("spline document shape mismatch".into()));
        }
        TensorSpline::new(space, doc.coeffs)
    }
}
