//! Gauss–Legendre rules applied atom by atom.

use crate::error::{Error, Result};

/// Points per atom for integrands that are not piecewise polynomials.
pub const NONPOLY_POINTS: usize = 16;

/// Default points per atom for a spline space of order `k`.
pub fn default_points(k: usize) -> usize {
    k.max(4)
}

/// `g`-point Gauss–Legendre rule on `[-1, 1]`; exact for degree `2g - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(g: usize) -> Result<Self> {
        if g == 0 {
            return Err(Error::InvalidParameter("quadrature needs at least one point".into()));
        }
        let mut nodes = vec![0.0; g];
        let mut weights = vec![0.0; g];
        let m = g.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_g
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (g as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(g, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(g, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[g - 1 - i] = x;
            weights[i] = w;
            weights[g - 1 - i] = w;
        }
        if g % 2 == 1 {
            nodes[g / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped to `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (lo + hi);
        let r = 0.5 * (hi - lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + r * x, r * w))
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, lo: f64, hi: f64, f: F) -> f64 {
        self.mapped(lo, hi).map(|(x, w)| w * f(x)).sum()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Nodes and weights of a rule replicated over every atom of a partition.
pub fn composite(breakpoints: &[f64], rule: &GaussLegendre) -> (Vec<f64>, Vec<f64>) {
    let n = (breakpoints.len() - 1) * rule.len();
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for w in breakpoints.windows(2) {
        for (x, wt) in rule.mapped(w[0], w[1]) {
            xs.push(x);
            ws.push(wt);
        }
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_up_to_degree_2g_minus_1() {
        for g in 1..=16 {
            let r = GaussLegendre::new(g).unwrap();
            for deg in 0..(2 * g) {
                let exact = (0.7f64.powi(deg as i32 + 1) - (-0.2f64).powi(deg as i32 + 1))
                    / (deg as f64 + 1.0);
                let got = r.integrate(-0.2, 0.7, |x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-14, "g={g} deg={deg} {got} vs {exact}");
            }
        }
    }

    #[test]
    fn weights_sum_to_two_and_nodes_sorted() {
        for g in 1..=20 {
            let r = GaussLegendre::new(g).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-14);
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        }
        assert!(GaussLegendre::new(0).is_err());
    }
}
