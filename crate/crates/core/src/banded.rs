//! Symmetric banded matrices and their Cholesky factorization.

use crate::error::{Error, Result};

/// Symmetric matrix with half-bandwidth `bw`, lower band stored row by row:
/// entry `(i, j)`, `i - bw <= j <= i`, lives at `i * (bw + 1) + bw + j - i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymBanded {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        (i - j <= self.bw).then(|| i * (self.bw + 1) + self.bw + j - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.band[s])
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.band[s] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.band[i * (self.bw + 1) + self.bw + j - i];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.band.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = l[i * w + bw + j - i];
                let kl = lo.max(j.saturating_sub(bw));
                for k in kl..j {
                    s -= l[i * w + bw + k - i] * l[j * w + bw + k - j];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization { row: i, pivot: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + bw + j - i] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }
}

/// `A = L L^T` with `L` lower banded.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_strided(&mut x, 0, 1);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_strided(b, 0, 1);
    }

    /// Solves in place on the fiber `data[offset + i * stride]`, `i < n`.
    pub fn solve_strided(&self, data: &mut [f64], offset: usize, stride: usize) {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let at = |i: usize| offset + i * stride;
        for i in 0..n {
            let mut s = data[at(i)];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + bw + k - i] * data[at(k)];
            }
            data[at(i)] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = data[at(i)];
            for k in (i + 1)..(i + w).min(n) {
                s -= self.l[k * w + bw + i - k] * data[at(k)];
            }
            data[at(i)] = s / self.l[i * w + bw];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_like(n: usize, bw: usize) -> SymBanded {
        let mut a = SymBanded::zeros(n, bw);
        for i in 0..n {
            a.add(i, i, 2.0 * (bw as f64 + 1.0));
            for d in 1..=bw {
                if i >= d {
                    a.add(i, i - d, -1.0 / d as f64);
                }
            }
        }
        a
    }

    #[test]
    fn solves_against_matvec() {
        for bw in 0..4 {
            let a = laplacian_like(17, bw);
            let x: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).cos()).collect();
            let b = a.matvec(&x);
            let got = a.cholesky().unwrap().solve(&b);
            for (u, v) in got.iter().zip(&x) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn strided_solve_matches_contiguous() {
        let a = laplacian_like(6, 2);
        let ch = a.cholesky().unwrap();
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let x = ch.solve(&b);
        let mut packed = vec![0.0; 18];
        for i in 0..6 {
            packed[1 + 3 * i] = b[i];
        }
        ch.solve_strided(&mut packed, 1, 3);
        for i in 0..6 {
            assert!((packed[1 + 3 * i] - x[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = SymBanded::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(matches!(a.cholesky(), Err(Error::Factorization { row: 1, .. })));
    }
}
