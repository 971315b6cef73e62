use martspline::bspline::SplineSpace1D;
use martspline::filtration::TensorFiltration;
use martspline::projector::{DecayProfile, GramSystem, DEFAULT_SAMPLES_PER_ATOM};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Constants of the pointwise domination `|P_n f(x)| <= C_k sum_j
/// q^{d(A, A_j)} |f|(A_j) / |conv(A u A_j)|`, derived from the measured dual
/// profiles: `q_hat` is the largest fitted ratio over axes and levels,
/// `c_axes[l]` the envelope constant of axis `l` for that ratio and
/// `c_k = prod_l k_l c_axes[l] q_hat^{-(k_l - 1)}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Domination {
    pub q_hat: f64,
    pub c_axes: Vec<f64>,
    pub c_k: f64,
}

pub fn domination_constants(f: &TensorFiltration, orders: &[usize], levels: std::ops::RangeInclusive<usize>) -> Result<Domination> {
    let mut profiles: Vec<Vec<Vec<f64>>> = vec![vec![]; f.dim()];
    let mut q_hat: f64 = 0.0;
    for (l, &k) in orders.iter().enumerate() {
        for n in levels.clone() {
            let p = f.axis(l).level(n)?.clone();
            let g = GramSystem::new(SplineSpace1D::new(p, k)?)?;
            let values = g.profile_values(DEFAULT_SAMPLES_PER_ATOM);
            if g.dim() >= 2 * k {
                q_hat = q_hat.max(DecayProfile::fit(k, values.clone(), DEFAULT_SAMPLES_PER_ATOM).q_hat);
            }
            profiles[l].push(values);
        }
    }
    let c_axes: Vec<f64> = profiles
        .iter()
        .map(|ps| {
            ps.iter()
                .map(|v| DecayProfile::envelope_constant(v, q_hat))
                .fold(0.0, f64::max)
        })
        .collect();
    let c_k = orders
        .iter()
        .zip(&c_axes)
        .map(|(&k, &c)| k as f64 * c * q_hat.powi(-(k as i32 - 1)))
        .product();
    Ok(Domination { q_hat, c_axes, c_k })
}

/// `count` equally spaced interior fractions of an atom.
pub fn interior_fractions(count: usize) -> Vec<f64> {
    (0..count).map(|j| (j as f64 + 0.5) / count as f64).collect()
}

/// Largest and smallest entries.
pub fn extent(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}
