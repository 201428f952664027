//! The moment estimator against exact permanents on inputs beyond the
//! one-dimensional chain it is usually run on: a generic correlation
//! matrix and a two-dimensional box.

use srp_core::gaussian::{estimate_moment, reed_check};
use srp_core::lattice::LatticeBox;
use srp_core::matrix::{KmsMatrix, SquareMatrix};
use srp_core::permanent::{permanent_bruteforce, permanent_exact};

/// Gram matrix of five explicit unit vectors: symmetric, unit diagonal,
/// positive definite by construction, and far from the exponential-decay
/// structure of the lattice correlations.
fn gram_correlation() -> SquareMatrix {
    let vectors = [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.6, 0.8, 0.0, 0.0, 0.0],
        [0.2, 0.3, (1.0f64 - 0.04 - 0.09).sqrt(), 0.0, 0.0],
        [-0.3, 0.1, 0.2, (1.0f64 - 0.09 - 0.01 - 0.04).sqrt(), 0.0],
        [0.1, -0.2, 0.3, 0.1, (1.0f64 - 0.01 - 0.04 - 0.09 - 0.01).sqrt()],
    ];
    SquareMatrix::from_fn(5, |i, j| {
        vectors[i]
            .iter()
            .zip(&vectors[j])
            .map(|(a, b)| a * b)
            .sum()
    })
}

#[test]
fn estimator_reproduces_brute_force_permanent_of_gram_matrix() {
    let cov = gram_correlation();
    let exact = permanent_bruteforce(&cov).unwrap().ln();
    let est = reed_check(&cov, 400_000, 17).unwrap();
    let implied = est.log_permanent(5);
    assert!(
        (implied - exact).abs() <= 3.0 * est.se_of_log,
        "implied {implied} vs exact {exact} (se {})",
        est.se_of_log
    );
    assert!(est.ess > 1000.0, "ess = {}", est.ess);
}

#[test]
fn estimator_reproduces_exact_permanent_on_a_plane_box() {
    let lat = LatticeBox::new(2, 2).unwrap();
    let beta = 0.7;
    let exact = permanent_exact(KmsMatrix::build(&lat, beta).unwrap().matrix())
        .unwrap()
        .ln();
    let est = estimate_moment(&lat, beta, 600_000, 5).unwrap();
    let implied = est.log_permanent(lat.n_sites());
    assert!(
        (implied - exact).abs() <= 3.0 * est.se_of_log,
        "implied {implied} vs exact {exact} (se {})",
        est.se_of_log
    );
}
