mod common;

use common::{frobenius_distance, TestRng};
use ellipsoid_core::ellipsoid::{
    build_deviations, build_gram, fit_ellipsoid_detailed, least_norm_oracle,
    max_constraint_residual, perturbation, solve_dual, verify, PSD_TOL,
};
use ellipsoid_core::linalg::SymMatrix;
use ellipsoid_core::sampling::{derive_trial_seed, sample_cloud, PointCloud};
use ellipsoid_core::FitStatus;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = PointCloud> {
    (5usize..16, 0.02f64..0.2, any::<u64>()).prop_map(|(d, f, seed)| {
        let n = ((f * (d * d) as f64).round() as usize).max(1);
        sample_cloud(d, n, seed).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_symmetric_with_unit_diagonal(cloud in instance()) {
        let m = build_gram(&cloud).unwrap();
        for i in 0..cloud.n() {
            prop_assert!((m.get(i, i) - 1.0).abs() <= 1e-12);
            for j in 0..i {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!(m.get(i, j) >= 0.0 && m.get(i, j) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn residual_identity(cloud in instance()) {
        let m = build_gram(&cloud).unwrap();
        let eps = build_deviations(&cloud);
        if let Ok(delta) = solve_dual(&m, &eps) {
            let q = perturbation(&cloud, &delta).unwrap().shifted(1.0);
            prop_assert!(max_constraint_residual(&cloud, &q).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn q_min_eig_bounded_by_perturbation(cloud in instance()) {
        let r = fit_ellipsoid_detailed(&cloud).unwrap().result;
        if r.status != FitStatus::GramDegenerate || !r.delta.is_empty() {
            prop_assert!(r.q_min_eig >= 1.0 - r.perturbation_norm - 1e-9);
        }
    }

    #[test]
    fn status_matches_certificates(cloud in instance()) {
        let fit = fit_ellipsoid_detailed(&cloud).unwrap();
        if fit.result.status.is_success() {
            let cert = verify(&cloud, fit.q.as_ref().unwrap()).unwrap();
            prop_assert!(cert.passes());
            prop_assert!(fit.result.q_min_eig >= -PSD_TOL);
        }
    }
}

#[test]
fn oracle_matches_pipeline_on_fifty_instances() {
    let mut rng = TestRng::new(31);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let d = [6, 8, 10][rng.below(3) as usize];
        let n = 4 + rng.below(17) as usize;
        let cloud = sample_cloud(d, n, derive_trial_seed(77, k)).unwrap();
        let fit = fit_ellipsoid_detailed(&cloud).unwrap();
        let q = fit.q.expect("solvable instance");
        let oracle = least_norm_oracle(&cloud).unwrap();
        worst = worst.max(frobenius_distance(&q, &oracle));
    }
    assert!(worst <= 1e-8, "worst Frobenius distance {worst:e}");
}

#[test]
fn rotating_the_cloud_rotates_q() {
    let (d, n) = (9, 12);
    let cloud = sample_cloud(d, n, 8).unwrap();
    let mut rng = TestRng::new(5);
    let a = DMatrix::from_fn(d, d, |_, _| rng.symmetric_unit());
    let r = a.qr().q();
    let rotated: Vec<f64> = (0..n)
        .flat_map(|i| {
            let g = nalgebra::DVector::from_column_slice(cloud.point(i));
            (&r * g).iter().copied().collect::<Vec<_>>()
        })
        .collect();
    let rotated = PointCloud::from_points(d, rotated, 0).unwrap();

    let q = fit_ellipsoid_detailed(&cloud).unwrap().q.unwrap();
    let q_rot = fit_ellipsoid_detailed(&rotated).unwrap().q.unwrap();
    let qd = DMatrix::from_fn(d, d, |i, j| q.get(i, j));
    let expected = &r * qd * r.transpose();
    let expected = SymMatrix::from_fn(d, |i, j| 0.5 * (expected[(i, j)] + expected[(j, i)]));
    let rel = frobenius_distance(&q_rot, &expected) / expected.frobenius_norm();
    assert!(rel <= 1e-9, "relative error {rel:e}");
}

#[test]
fn rescaled_q_certifies_rescaled_cloud() {
    let cloud = sample_cloud(20, 30, 9).unwrap();
    let q = fit_ellipsoid_detailed(&cloud).unwrap().q.unwrap();
    for c in [0.5, 2.0, 10.0] {
        let scaled = cloud.scaled(c).unwrap();
        let cert = verify(&scaled, &q.scaled(1.0 / (c * c))).unwrap();
        assert!(cert.passes(), "c = {c}: {cert:?}");
    }
}

#[test]
fn moderate_instances_succeed() {
    let ok = (0..40)
        .filter(|&k| {
            let cloud = sample_cloud(50, 125, derive_trial_seed(3, k)).unwrap();
            fit_ellipsoid_detailed(&cloud)
                .unwrap()
                .result
                .status
                .is_success()
        })
        .count();
    assert!(ok >= 38, "{ok}/40");
}

#[test]
fn overfull_instances_fail_cleanly() {
    // n > d(d+1)/2 cannot be interpolated by the construction
    let cloud = sample_cloud(6, 25, 1).unwrap();
    let fit = fit_ellipsoid_detailed(&cloud).unwrap();
    assert_eq!(fit.result.status, FitStatus::GramDegenerate);
    assert!(fit.result.max_residual.is_nan());
}
