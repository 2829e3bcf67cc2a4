use nalgebra::{DMatrix, DVector};
use plda_adapt::dataset::{apply_transform, EmbeddingSet};
use plda_adapt::eval::{compute_eer, compute_min_dcf};
use plda_adapt::htplda::ht_precompute;
use plda_adapt::linalg::{self, CovNorm, SymMatrix};
use proptest::prelude::*;

fn spd(dim: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-2.0f64..2.0, dim * dim).prop_map(move |v| {
        let a = DMatrix::from_vec(dim, dim, v);
        SymMatrix::symmetrize(&a * a.transpose() + DMatrix::identity(dim, dim) * 0.1)
    })
}

fn spd_pair() -> impl Strategy<Value = (SymMatrix, SymMatrix)> {
    (2usize..7).prop_flat_map(|d| (spd(d), spd(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_max_dominates_both((a, b) in spd_pair()) {
        let g = linalg::gamma_max(&a, &b).unwrap();
        prop_assert!(linalg::relative_dominance_margin(&g, &a) >= -1e-10);
        prop_assert!(linalg::relative_dominance_margin(&g, &b) >= -1e-10);
    }

    #[test]
    fn sim_diag_contracts((r, d) in spd_pair()) {
        let sd = linalg::sim_diag(&r, &d).unwrap();
        let n = r.dim();
        let white = sd.b.transpose() * r.as_matrix() * &sd.b;
        prop_assert!((white - DMatrix::identity(n, n)).amax() < 1e-8);
        let diag = sd.b.transpose() * d.as_matrix() * &sd.b;
        prop_assert!((diag - DMatrix::from_diagonal(&sd.e)).amax() < 1e-8 * sd.e.amax().max(1.0));
        prop_assert!(sd.e.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sqrt_and_inverse_sqrt_compose(m in (2usize..7).prop_flat_map(spd)) {
        let root = linalg::spd_sqrt(&m).unwrap();
        let inv_root = linalg::spd_inv_sqrt(&m).unwrap();
        let n = m.dim();
        prop_assert!(linalg::rel_frobenius(&(root.as_matrix() * root.as_matrix()), m.as_matrix()) < 1e-10);
        let id = inv_root.as_matrix() * m.as_matrix() * inv_root.as_matrix();
        prop_assert!((id - DMatrix::identity(n, n)).amax() < 1e-8);
    }

    #[test]
    fn transform_obeys_covariance_law(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 4..20),
        a in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let n = rows.len();
        let data = DMatrix::from_fn(n, 3, |i, j| rows[i][j]);
        let ids = (0..n).map(|i| format!("u{i}")).collect();
        let x = EmbeddingSet::new(ids, None, data).unwrap();
        let a = DMatrix::from_vec(3, 3, a);
        let c = x.total_cov(CovNorm::MaxLikelihood).unwrap();
        let y = apply_transform(&a, &x).unwrap();
        let cy = y.total_cov(CovNorm::MaxLikelihood).unwrap();
        let expect = c.conjugate(&a);
        prop_assert!((cy.as_matrix() - expect.as_matrix()).amax() <= 1e-9 * (1.0 + expect.as_matrix().amax()));
    }

    #[test]
    fn metrics_invariant_under_monotone_maps(
        scores in prop::collection::vec((-5i32..5, any::<bool>()), 2..40),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let raw: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| (s as f64, l)).collect();
        let mapped: Vec<(f64, bool)> = raw.iter().map(|&(s, l)| ((s * scale + shift).exp(), l)).collect();
        prop_assert!((compute_eer(&raw).unwrap() - compute_eer(&mapped).unwrap()).abs() < 1e-12);
        for p in [0.01, 0.005, 0.3] {
            let d = compute_min_dcf(&raw, p, 1.0, 1.0).unwrap() - compute_min_dcf(&mapped, p, 1.0, 1.0).unwrap();
            prop_assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn precision_scale_decreases_along_rays(
        f in prop::collection::vec(-1.0f64..1.0, 4),
        phi in prop::collection::vec(-1.0f64..1.0, 4),
        nu in 1.0f64..30.0,
    ) {
        let f = DMatrix::from_vec(4, 1, f);
        prop_assume!(f.norm() > 0.1);
        let model = ht_precompute(nu, f, SymMatrix::identity(4)).unwrap();
        let phi = DVector::from_vec(phi);
        let bmax = (nu + 3.0) / nu;
        let mut prev = f64::INFINITY;
        for c in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let b = model.utt_stats(&(&phi * c)).unwrap().b;
            prop_assert!(b <= bmax + 1e-12);
            prop_assert!(b <= prev + 1e-12);
            prev = b;
        }
    }
}
