use martspline::bspline::{SplineSpace1D, TensorSpace, TensorSpline};
use martspline::filtration::*;
use martspline::measures::{ClosureMode, Density, Dirac, HybridMeasure};
use martspline::projector::{GramSystem, TensorProjector};
use martspline::quadrature::GaussLegendre;
use proptest::prelude::*;

fn partition_from_widths(widths: &[f64]) -> Partition1D {
    let total: f64 = widths.iter().sum();
    let mut bp = vec![0.0];
    let mut acc = 0.0;
    for w in &widths[..widths.len() - 1] {
        acc += w / total;
        bp.push(acc);
    }
    bp.push(1.0);
    Partition1D::new(bp).unwrap()
}

/// Every atom split at its midpoint.
fn bisect(p: &Partition1D) -> Partition1D {
    let bp = p.breakpoints();
    let mut out = vec![bp[0]];
    for w in bp.windows(2) {
        out.push(0.5 * (w[0] + w[1]));
        out.push(w[1]);
    }
    Partition1D::new(out).unwrap()
}

fn widths() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..1.0, 3..14)
}

/// `int a b` over the atoms of `p`, which must refine both splines' partitions.
fn inner_on(p: &Partition1D, a: &TensorSpline, b: &TensorSpline) -> f64 {
    let rule = GaussLegendre::new(4).unwrap();
    let mut s = 0.0;
    for j in 0..p.num_atoms() {
        let atom = p.atom(j);
        for (x, w) in rule.mapped(atom.lo, atom.hi) {
            s += w * a.eval(&[x]).unwrap()[0] * b.eval(&[x]).unwrap()[0];
        }
    }
    s
}

fn project_1d(target: &GramSystem, s: &TensorSpline) -> Vec<f64> {
    let proj = TensorProjector::new(TensorSpace::new(vec![target.space().clone()]).unwrap()).unwrap();
    proj.project_spline(s).unwrap().coeffs()[0].clone()
}

fn spline_1d(space: &SplineSpace1D, coeffs: Vec<f64>) -> TensorSpline {
    TensorSpline::new(TensorSpace::new(vec![space.clone()]).unwrap(), vec![coeffs]).unwrap()
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            dense_solve(a.to_vec(), e)
        })
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projection_is_idempotent(w in widths(), k in 1usize..5, seed in 0u64..1000) {
        let p = partition_from_widths(&w);
        let coarse = GramSystem::new(SplineSpace1D::new(p.clone(), k).unwrap()).unwrap();
        let fine = SplineSpace1D::new(bisect(&p), k).unwrap();
        let c: Vec<f64> = (0..fine.dim()).map(|i| ((i as u64 * 7919 + seed) % 13) as f64 - 6.0).collect();
        let once = project_1d(&coarse, &spline_1d(&fine, c));
        let twice = project_1d(&coarse, &spline_1d(coarse.space(), once.clone()));
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn projection_is_self_adjoint(w in widths(), k in 1usize..5, seed in 0u64..1000) {
        let p = partition_from_widths(&w);
        let coarse = GramSystem::new(SplineSpace1D::new(p.clone(), k).unwrap()).unwrap();
        let fine = SplineSpace1D::new(bisect(&p), k).unwrap();
        let u: Vec<f64> = (0..fine.dim()).map(|i| (((i as u64 + 3) * (seed + 11)) % 17) as f64 / 17.0 - 0.5).collect();
        let v: Vec<f64> = (0..fine.dim()).map(|i| (((i as u64 + 5) * (seed + 29)) % 19) as f64 / 19.0 - 0.5).collect();
        let pu = project_1d(&coarse, &spline_1d(&fine, u.clone()));
        let pv = project_1d(&coarse, &spline_1d(&fine, v.clone()));
        let fine_p = fine.partition().clone();
        let lhs = inner_on(&fine_p, &spline_1d(coarse.space(), pu), &spline_1d(&fine, v));
        let rhs = inner_on(&fine_p, &spline_1d(&fine, u), &spline_1d(coarse.space(), pv));
        prop_assert!((lhs - rhs).abs() <= 1e-11);
    }

    #[test]
    fn nested_projections_compose(w in widths(), k in 1usize..4) {
        let p1 = partition_from_widths(&w);
        let p2 = bisect(&p1);
        let p3 = bisect(&p2);
        let g1 = GramSystem::new(SplineSpace1D::new(p1, k).unwrap()).unwrap();
        let g2 = GramSystem::new(SplineSpace1D::new(p2, k).unwrap()).unwrap();
        let s3 = SplineSpace1D::new(p3, k).unwrap();
        let c: Vec<f64> = (0..s3.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let direct = project_1d(&g1, &spline_1d(&s3, c.clone()));
        let mid = project_1d(&g2, &spline_1d(&s3, c));
        let stepped = project_1d(&g1, &spline_1d(g2.space(), mid));
        for (a, b) in direct.iter().zip(&stepped) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn kronecker_solve_matches_dense(wx in widths(), wy in widths(), kx in 1usize..4, ky in 1usize..4) {
        let px = partition_from_widths(&wx);
        let py = partition_from_widths(&wy);
        let proj = TensorProjector::new(TensorSpace::from_partitions(&[&px, &py], &[kx, ky]).unwrap()).unwrap();
        let gx = proj.grams()[0].matrix().to_dense();
        let gy = proj.grams()[1].matrix().to_dense();
        let (nx, ny) = (gx.len(), gy.len());
        let n = nx * ny;
        let mut big = vec![vec![0.0; n]; n];
        for i in 0..nx {
            for j in 0..ny {
                for a in 0..nx {
                    for b in 0..ny {
                        big[i * ny + j][a * ny + b] = gx[i][a] * gy[j][b];
                    }
                }
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| ((i * 31) % 7) as f64 - 3.0).collect();
        let want = dense_solve(big, rhs.clone());
        let mut got = rhs;
        proj.solve_tensor(&mut got);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn atom_distance_is_a_metric(seed in 0u64..500, a in prop::collection::vec(0usize..16, 2), b in prop::collection::vec(0usize..16, 2), c in prop::collection::vec(0usize..16, 2)) {
        let spec = FiltrationSpec::new(2, [0.0, 1.0], 4, RefinementRule::UniformBisectAll, seed);
        let f = build_filtration(&spec).unwrap();
        let (a, b, c) = (AtomIndex(a), AtomIndex(b), AtomIndex(c));
        let ab = f.atom_distance(4, &a, &b).unwrap();
        let bc = f.atom_distance(4, &b, &c).unwrap();
        let ac = f.atom_distance(4, &a, &c).unwrap();
        prop_assert!(ac <= ab + bc);
        prop_assert_eq!(ab, f.atom_distance(4, &b, &a).unwrap());
        prop_assert_eq!(f.atom_distance(4, &a, &a).unwrap(), 0);
    }

    #[test]
    fn measure_is_additive_on_disjoint_sets(seed in 0u64..500, mask in prop::collection::vec(any::<bool>(), 64)) {
        let spec = FiltrationSpec::new(2, [0.0, 1.0], 3, RefinementRule::RandomAtomBisect { split_prob: 0.7, jitter: 0.2 }, seed);
        let f = build_filtration(&spec).unwrap();
        let total = f.num_atoms(3).unwrap();
        let m: Vec<bool> = (0..total).map(|i| mask[i % mask.len()]).collect();
        let theta = HybridMeasure::new(
            2,
            Density::Gaussian { center: vec![0.3, 0.6], width: 0.2, scale: 2.0 },
            vec![Dirac { location: vec![0.41, 0.77], mass: vec![0.5] }],
        ).unwrap();
        let a = AtomSet::from_mask(&f, 3, m.clone()).unwrap();
        let b = a.complement();
        let full = AtomSet::full(&f, 3).unwrap();
        let ma = theta.measure_of_set(&f, &a, ClosureMode::Open).unwrap()[0];
        let mb = theta.measure_of_set(&f, &b, ClosureMode::Open).unwrap()[0];
        let mf = theta.measure_of_set(&f, &full, ClosureMode::Open).unwrap()[0];
        prop_assert!((ma + mb - mf).abs() <= 1e-12 * (1.0 + mf.abs()));
    }
}

#[test]
fn uniform_linear_decay_matches_dense_inverse() {
    let p = Partition1D::uniform(Interval::new(0.0, 1.0).unwrap(), 64).unwrap();
    let g = GramSystem::new(SplineSpace1D::new(p, 2).unwrap()).unwrap();
    let inv = dense_inverse(&g.matrix().to_dense());
    // ratio of consecutive inverse entries away from the boundary
    let mid = 32;
    let oracle = (inv[mid][mid + 6] / inv[mid][mid + 5]).abs();
    assert!((oracle - (2.0 - 3f64.sqrt())).abs() < 1e-6);
    // the profile carries the hull width (about (s + 2) h), which tilts the
    // fitted ratio slightly above the pure coefficient ratio
    let prof = g.decay_profile(8).unwrap();
    assert!(
        prof.q_hat >= oracle && prof.q_hat < 1.12 * oracle,
        "fitted {} vs dense inverse {}",
        prof.q_hat,
        oracle
    );
}

#[test]
fn duals_match_dense_inverse_rows() {
    let p = partition_from_widths(&[0.3, 1.0, 0.5, 0.7, 0.2, 0.9, 0.4]);
    for k in 1..=4 {
        let g = GramSystem::new(SplineSpace1D::new(p.clone(), k).unwrap()).unwrap();
        let inv = dense_inverse(&g.matrix().to_dense());
        for (i, row) in inv.iter().enumerate() {
            let c = g.dual_coefficients(i).unwrap();
            for (a, b) in c.iter().zip(row) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
        assert!(g.biorthogonality_error().unwrap() < 1e-10);
    }
}

/// `int |K(x, y)| dy` for piecewise linear `K(x, .)`, exact on each atom.
fn exact_linear_norm(g: &GramSystem, inv: &[Vec<f64>], x: f64) -> f64 {
    let space = g.space();
    let p = space.partition();
    let n = space.dim();
    let nx: Vec<f64> = (0..n).map(|i| space.basis_value(i, x).unwrap()).collect();
    let kern: Vec<f64> = (0..n).map(|j| (0..n).map(|i| nx[i] * inv[i][j]).sum()).collect();
    // hat functions: K(x, .) is linear between breakpoints with nodal values kern
    let bp = p.breakpoints();
    let mut total = 0.0;
    for j in 0..p.num_atoms() {
        let (a, b) = (kern[j], kern[j + 1]);
        let h = bp[j + 1] - bp[j];
        total += if a * b >= 0.0 {
            0.5 * h * (a.abs() + b.abs())
        } else {
            0.5 * h * (a * a + b * b) / (a.abs() + b.abs())
        };
    }
    total
}

#[test]
fn linear_norm_matches_dense_kernel_and_settles() {
    let f = build_filtration(&FiltrationSpec::dyadic(1, 8)).unwrap();
    let mut norms = vec![];
    for n in 4..=8 {
        let p = f.axis(0).level(n).unwrap().clone();
        let g = GramSystem::new(SplineSpace1D::new(p, 2).unwrap()).unwrap();
        let est = g.operator_norm_inf(8, 16).unwrap();
        let inv = dense_inverse(&g.matrix().to_dense());
        let oracle = exact_linear_norm(&g, &inv, est.argmax[0]);
        assert!(
            (est.value - oracle).abs() <= 1e-3 * oracle,
            "level {n}: {} vs {}",
            est.value,
            oracle
        );
        norms.push(est.value);
    }
    let hi = norms.iter().copied().fold(0.0, f64::max);
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((hi - lo) / hi < 0.01, "{norms:?}");
}
