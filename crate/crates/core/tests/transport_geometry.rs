mod common;

use nalgebra::{DMatrix, DVector};
use phiexp::normalization::solve_for_det;
use phiexp::transport::{
    geodesic_point, geodesic_point_extended, mahalanobis_grid, optimal_matrix, pushforward_check, spd_sqrt,
    w2_distance, w2_squared,
};
use phiexp::{FamilyPoint, FamilyTag, GaussianParams, OptimalMap, PhiSpec};
use proptest::prelude::*;

/// Random SPD matrix `L L^T + eps I` from six entries.
fn spd(e: &[f64], eps: f64) -> DMatrix<f64> {
    let l = DMatrix::from_row_slice(3, 3, &[e[0], 0.0, 0.0, e[1], e[2], 0.0, e[3], e[4], e[5]]);
    &l * l.transpose() + DMatrix::identity(3, 3) * eps
}

fn gp(mean: &[f64], cov: DMatrix<f64>) -> GaussianParams {
    GaussianParams::new(DVector::from_column_slice(mean), cov).unwrap()
}

fn arb_params() -> impl Strategy<Value = GaussianParams> {
    (prop::collection::vec(-3.0f64..3.0, 3), prop::collection::vec(-2.0f64..2.0, 6))
        .prop_map(|(m, e)| gp(&m, spd(&e, 0.1)))
}

fn push_residual(spec: &PhiSpec, a: &GaussianParams, b: &GaussianParams) -> f64 {
    let g = common::lx(spec);
    let d = a.dim();
    let k = solve_for_det(&g, d, 1.0, FamilyTag::G).unwrap();
    let src = FamilyPoint::with_constants(&g, FamilyTag::G, a.mean.clone(), a.cov.clone(), k.clone()).unwrap();
    let dst = FamilyPoint::with_constants(&g, FamilyTag::G, b.mean.clone(), b.cov.clone(), k).unwrap();
    let grid = mahalanobis_grid(&a.mean, &a.cov, 21, 4.0).unwrap();
    pushforward_check(&src, &dst, &OptimalMap::between(a, b).unwrap(), &grid).unwrap()
}

#[test]
fn pushforward_matches_for_general_pairs() {
    let a = gp(&[0.5, -1.0, 0.0], spd(&[1.0, 0.3, 0.8, -0.2, 0.4, 1.1], 0.0));
    let b = gp(&[2.0, 0.0, -1.0], spd(&[0.7, -0.5, 1.2, 0.1, 0.3, 0.6], 0.0));
    for spec in [PhiSpec::power(1.0).unwrap(), PhiSpec::power(1.2).unwrap(), PhiSpec::power(0.8).unwrap()] {
        let r = push_residual(&spec, &a, &b);
        assert!(r < 1e-8, "{spec}: {r:e}");
    }
}

#[test]
fn pushforward_rejects_the_normalized_family() {
    let a = common::isotropic(&PhiSpec::power(1.2).unwrap(), FamilyTag::N, 2, 1.0);
    let params = GaussianParams::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let grid = mahalanobis_grid(&params.mean, &params.cov, 5, 2.0).unwrap();
    let map = OptimalMap::identity(DVector::zeros(2));
    assert!(pushforward_check(&a, &a, &map, &grid).is_err());
}

#[test]
fn endpoint_of_geodesic_is_target() {
    let a = gp(&[1.0, 2.0, 3.0], spd(&[1.0, 0.2, 0.5, 0.0, 0.1, 2.0], 0.0));
    let b = gp(&[0.0, 0.0, 1.0], spd(&[2.0, 1.0, 0.5, -1.0, 0.2, 0.3], 0.0));
    let end = geodesic_point(&a, &b, 1.0).unwrap();
    assert!((&end.cov - &b.cov).norm() < 1e-10);
    assert!((&end.mean - &b.mean).norm() < 1e-14);
    let start = geodesic_point(&a, &b, 0.0).unwrap();
    assert!((&start.cov - &a.cov).norm() < 1e-14);
    assert!(geodesic_point(&a, &b, 1.5).is_err());
    assert!(geodesic_point_extended(&a, &b, 1.5).is_ok());
}

#[test]
fn degenerate_target_is_clamped_not_rejected() {
    let a = gp(&[0.0, 0.0], DMatrix::identity(2, 2));
    let dirac = GaussianParams::dirac(DVector::zeros(2));
    let (w2, _) = w2_squared(&a, &dirac).unwrap();
    assert!((w2 - 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sqrt_squares_back(e in prop::collection::vec(-2.0f64..2.0, 6)) {
        let m = spd(&e, 0.05);
        let r = spd_sqrt(&m).unwrap();
        prop_assert!((&r * &r - &m).norm() <= 1e-10 * m.norm());
        prop_assert!((&r - r.transpose()).norm() <= 1e-12 * r.norm());
    }

    #[test]
    fn optimal_matrix_pushes_covariance(e in prop::collection::vec(-2.0f64..2.0, 6), f in prop::collection::vec(-2.0f64..2.0, 6)) {
        let v = spd(&e, 0.1);
        let u = spd(&f, 0.1);
        let w = optimal_matrix(&v, &u).unwrap();
        prop_assert!((&w * &v * &w - &u).norm() <= 1e-8 * u.norm());
        prop_assert!((&w - w.transpose()).norm() <= 1e-9 * w.norm());
        prop_assert!(w.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn distance_is_a_metric(a in arb_params(), b in arb_params(), c in arb_params()) {
        let ab = w2_distance(&a, &b).unwrap();
        let ba = w2_distance(&b, &a).unwrap();
        let bc = w2_distance(&b, &c).unwrap();
        let ac = w2_distance(&a, &c).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(w2_distance(&a, &a).unwrap() <= 1e-6);
    }

    #[test]
    fn geodesic_has_constant_speed_and_spd_covariance(a in arb_params(), b in arb_params(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let total = w2_distance(&a, &b).unwrap();
        let ps = geodesic_point(&a, &b, s).unwrap();
        let pt = geodesic_point(&a, &b, t).unwrap();
        let between = w2_distance(&ps, &pt).unwrap();
        prop_assert!((between - (s - t).abs() * total).abs() <= 1e-7 * total.max(1.0));
        prop_assert!(pt.cov.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    }
}
