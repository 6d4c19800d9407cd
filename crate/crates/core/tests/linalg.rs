mod common;

use common::{jacobi_eigenvalues, random_spd, random_symmetric, sym, TestRng};
use ellipsoid_core::linalg::{
    cholesky_solve, extreme_eigenvalues, extreme_eigenvalues_with, norm2, spectral_norm,
    EigOptions, SOLVE_RESIDUAL_FACTOR,
};

#[test]
fn extremes_match_jacobi_up_to_order_32() {
    let mut rng = TestRng::new(11);
    for n in 1..=32 {
        for _ in 0..5 {
            let a = random_symmetric(n, &mut rng);
            let oracle = jacobi_eigenvalues(&a);
            let pair = extreme_eigenvalues(&sym(&a), 1e-12).unwrap();
            assert!((pair.lambda_min - oracle[0]).abs() <= 1e-9, "n = {n}");
            assert!((pair.lambda_max - oracle[n - 1]).abs() <= 1e-9, "n = {n}");
        }
    }
}

#[test]
fn lanczos_path_matches_jacobi() {
    let mut rng = TestRng::new(12);
    for n in [8, 20, 32] {
        let a = random_symmetric(n, &mut rng);
        let oracle = jacobi_eigenvalues(&a);
        let opts = EigOptions {
            dense_cutoff: 0,
            ..EigOptions::new(1e-12)
        };
        let pair = extreme_eigenvalues_with(&sym(&a), &opts).unwrap();
        assert!((pair.lambda_min - oracle[0]).abs() <= 1e-9);
        assert!((pair.lambda_max - oracle[n - 1]).abs() <= 1e-9);
    }
    // above the dense cutoff, against Jacobi directly
    let a = random_symmetric(100, &mut rng);
    let oracle = jacobi_eigenvalues(&a);
    let pair = extreme_eigenvalues(&sym(&a), 1e-12).unwrap();
    assert!((pair.lambda_min - oracle[0]).abs() <= 1e-8);
    assert!((pair.lambda_max - oracle[99]).abs() <= 1e-8);
}

#[test]
fn spectral_norm_is_even() {
    let mut rng = TestRng::new(13);
    for n in [1, 3, 16, 64, 65, 120] {
        let a = sym(&random_symmetric(n, &mut rng));
        let neg = a.scaled(-1.0);
        let p = spectral_norm(&a, 1e-12).unwrap();
        let m = spectral_norm(&neg, 1e-12).unwrap();
        assert!((p - m).abs() <= 1e-10 * p, "n = {n}: {p} vs {m}");
    }
}

#[test]
fn cholesky_residual_bound_on_random_spd() {
    let mut rng = TestRng::new(14);
    for n in [2usize, 10, 100] {
        for _ in 0..100 {
            let s = sym(&random_spd(n, 1e-3, &mut rng));
            let b: Vec<f64> = (0..n).map(|_| rng.symmetric_unit()).collect();
            let x = cholesky_solve(&s, &b).unwrap();
            let sx = s.matvec(&x);
            let r: Vec<f64> = sx.iter().zip(&b).map(|(a, b)| a - b).collect();
            let bound = SOLVE_RESIDUAL_FACTOR * (s.frobenius_norm() * norm2(&x) + norm2(&b));
            assert!(norm2(&r) <= bound, "n = {n}");
        }
    }
}
