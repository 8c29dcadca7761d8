use std::sync::OnceLock;

use faer::Mat;
use proptest::prelude::*;

use sgns_core::fem::Geometry;
use sgns_core::geometry::Rect;
use sgns_core::gpc::GpcBasis;
use sgns_core::kron::LinearOperator;
use sgns_core::lowrank::{Dims, Factored, Field, LowRankVec};
use sgns_core::monte_carlo::Welford;
use sgns_core::problem::{Linearization, Problem, ProblemSpec};
use sgns_core::sparse;
use sgns_core::stats;

fn problem() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(|| {
        Problem::new(ProblemSpec {
            geometry: Geometry::strip(Rect::new(0.0, 2.0, -1.0, 1.0).unwrap()),
            h: 0.5,
            n_nu: 2,
            d_max: 2,
            cov: 0.1,
            kl_grid: (16, 8),
            ..ProblemSpec::default()
        })
        .unwrap()
    })
}

fn mat(n: usize, m: usize, vals: &[f64], scale: &[f64]) -> Mat<f64> {
    Mat::from_fn(n, m, |i, j| vals[(i * m + j) % vals.len()] * scale[j % scale.len()])
}

fn lowrank(d: Dims, r: usize, vals: &[f64]) -> LowRankVec<f64> {
    let blocks = Field::ALL.map(|f| {
        let shift = f.index() * 7;
        let v = Mat::from_fn(d.spatial(f), r, |i, j| vals[(i * 3 + j * 11 + shift) % vals.len()]);
        let w = Mat::from_fn(d.n_xi, r, |i, j| vals[(i * 5 + j * 13 + shift + 1) % vals.len()]);
        Factored::new(v, w).unwrap()
    });
    LowRankVec::from_blocks(d, blocks).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let n = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    n / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_respects_relative_bound(
        n in 1usize..60, m in 1usize..20, r in 1usize..12,
        vals in prop::collection::vec(-1.0f64..1.0, 64),
        decay in 0.05f64..1.0, log_eps in -12.0f64..-0.5,
    ) {
        let scale: Vec<f64> = (0..r).map(|k| decay.powi(k as i32)).collect();
        let f = Factored::new(mat(n, r, &vals, &scale), mat(m, r, &vals[7..], &[1.0])).unwrap();
        let eps = 10f64.powf(log_eps);
        let (t, _) = f.truncate(eps);
        let u = f.dense();
        let diff = (&t.dense() - &u).norm_l2();
        prop_assert!(diff <= eps * u.norm_l2() * (1.0 + 1e-8) + 1e-13 * u.norm_l2());
        prop_assert!(t.rank() <= r.min(n).min(m));
        // Truncating again at the same tolerance cannot need more rank.
        prop_assert!(t.truncate(eps).0.rank() <= t.rank());
    }

    #[test]
    fn lowrank_arithmetic_matches_vectors(
        vals in prop::collection::vec(-1.0f64..1.0, 48),
        a in -3.0f64..3.0, b in -3.0f64..3.0,
    ) {
        let d = Dims::new(13, 5, 4);
        let x = lowrank(d, 2, &vals);
        let y = lowrank(d, 3, &vals[5..]);
        let (xv, yv) = (x.to_vector().unwrap(), y.to_vector().unwrap());
        let z = LowRankVec::linear_combination(&[(a, &x), (b, &y)]).unwrap().to_vector().unwrap();
        let want: Vec<f64> = xv.iter().zip(&yv).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(rel(&z, &want) < 1e-12 || want.iter().all(|w| w.abs() < 1e-12));
        let dot: f64 = xv.iter().zip(&yv).map(|(p, q)| p * q).sum();
        prop_assert!((x.dot(&y).unwrap() - dot).abs() <= 1e-12 * (1.0 + dot.abs()));
        let nrm = xv.iter().map(|p| p * p).sum::<f64>().sqrt();
        prop_assert!((x.norm() - nrm).abs() <= 1e-12 * (1.0 + nrm));
    }

    #[test]
    fn jacobian_apply_is_linear(
        vals in prop::collection::vec(-1.0f64..1.0, 40),
        a in -2.0f64..2.0, b in -2.0f64..2.0,
    ) {
        let p = problem();
        let d = p.dims();
        let u = lowrank(d, 2, &vals).scaled(0.3);
        let j = p.linearized(&u, Linearization::Newton).unwrap();
        let x = lowrank(d, 2, &vals[3..]);
        let y = lowrank(d, 1, &vals[9..]);
        let lhs = j.apply(&LowRankVec::linear_combination(&[(a, &x), (b, &y)]).unwrap(), 0.0).unwrap().to_vector().unwrap();
        let jx = j.apply(&x, 0.0).unwrap().to_vector().unwrap();
        let jy = j.apply(&y, 0.0).unwrap().to_vector().unwrap();
        let rhs: Vec<f64> = jx.iter().zip(&jy).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(rel(&lhs, &rhs) < 1e-11);
    }

    #[test]
    fn factored_moments_match_dense(vals in prop::collection::vec(-1.0f64..1.0, 40)) {
        let p = problem();
        let u = lowrank(p.dims(), 3, &vals);
        let s = stats::compute_stats(&u, &p.basis).unwrap();
        let (mean, var) = stats::dense_moments(&u).unwrap();
        for f in Field::ALL {
            prop_assert!(s.variance(f).iter().all(|v| *v >= 0.0));
            prop_assert!(rel(s.mean(f), &mean[f.index()]) < 1e-12 || mean[f.index()].iter().all(|v| v.abs() < 1e-14));
            for (a, b) in s.variance(f).iter().zip(&var[f.index()]) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn welford_is_order_independent(xs in prop::collection::vec(-1e3f64..1e3, 2..50), seed in any::<u64>()) {
        let mut perm = xs.clone();
        let k = (seed as usize) % perm.len();
        perm.rotate_left(k);
        perm.reverse();
        let (mut a, mut b) = (Welford::new(1), Welford::new(1));
        xs.iter().for_each(|x| a.push(&[*x]));
        perm.iter().for_each(|x| b.push(&[*x]));
        let scale = xs.iter().map(|x| x * x).sum::<f64>().max(1.0);
        prop_assert!((a.mean()[0] - b.mean()[0]).abs() <= 1e-12 * scale.sqrt());
        prop_assert!((a.variance()[0] - b.variance()[0]).abs() <= 1e-10 * scale);
        prop_assert!(a.variance()[0] >= 0.0);
    }

    #[test]
    fn basis_evaluation_reproduces_triple_products(xi in prop::collection::vec(-1.0f64..1.0, 2)) {
        // sum_k G_l[i, k] psi_k(xi) = psi_l(xi) psi_i(xi) whenever the product stays in the space.
        let basis = GpcBasis::<f64>::new(2, 4);
        let psi = basis.eval(&xi).unwrap();
        let deg: Vec<usize> = basis.indices().iter().map(|m| m.total_degree()).collect();
        for l in 0..basis.len() {
            let g = sparse::to_dense(basis.g(l));
            for i in 0..basis.len() {
                if deg[l] + deg[i] > 4 {
                    continue;
                }
                let lhs: f64 = (0..basis.len()).map(|k| g[(i, k)] * psi[k]).sum();
                prop_assert!((lhs - psi[l] * psi[i]).abs() < 1e-11, "l {} i {}", l, i);
                prop_assert!((g[(i, l)] - g[(l, i)]).abs() < 1e-14);
            }
        }
    }
}
