//! Monte Carlo estimation of the Gaussian moment E[∏_x (X_x² + Y_x²)].
//!
//! Two independent copies X, Y of a centred Gaussian field with covariance
//! e^{−β|x−y|} are drawn and the product of X_x² + Y_x² over all sites is
//! averaged: the mean equals 2ⁿ times the permanent of the covariance
//! matrix, which turns the permanent into a sampling problem.
//!
//! In one dimension the field is a stationary first-order autoregression
//! (decay e^{−β} per lattice step), so a sample costs O(n); in higher
//! dimensions the covariance is factored once by Cholesky and a sample
//! costs O(n²). Per-sample products are accumulated in log space and
//! combined with log-sum-exp — over n sites they under- and overflow far
//! too fast for direct products.
//!
//! The estimator is heavy-tailed: its relative variance grows roughly
//! exponentially with the number of sites. The module therefore caps
//! moment runs at [`MOMENT_CEILING`] sites and attaches an
//! effective-sample-size diagnostic computed from the dispersion of the
//! log samples — a small ESS flags an average dominated by a handful of
//! draws, whatever the nominal sample count says.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{LatticeBox, LatticeError};
use crate::matrix::{KmsMatrix, MatrixError, SquareMatrix};
use crate::numeric::{batch_means_standard_error, log_sum_exp, KahanSum};

/// Largest site count accepted for moment estimation; beyond it the
/// estimator's variance makes the answer decorative rather than usable.
pub const MOMENT_CEILING: usize = 12;

/// Smallest sample count accepted — fewer samples cannot support the
/// batch-means error bar.
pub const MIN_SAMPLES: u64 = 1_000;

/// Failures of sampler construction and moment estimation.
#[derive(Debug, Error)]
pub enum GaussianError {
    /// The field construction needs strictly positive β (at β = 0 the
    /// covariance degenerates to the singular all-ones matrix).
    #[error("inverse temperature must be positive and finite, got {0}")]
    BadBeta(f64),
    /// Moment estimation is capped at [`MOMENT_CEILING`] sites.
    #[error("moment estimation supports at most {MOMENT_CEILING} sites, got {0}")]
    TooManySites(usize),
    /// Sample counts below [`MIN_SAMPLES`] are rejected.
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(u64),
    /// The covariance matrix must be symmetric.
    #[error("covariance entry ({i}, {j}) breaks symmetry: {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    /// Cholesky pivot collapsed — the matrix is not (numerically)
    /// positive-definite.
    #[error("covariance is numerically degenerate at pivot {0}")]
    DegenerateCovariance(usize),
    /// Invalid box input.
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    /// Invalid matrix input.
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone)]
enum SamplerMode {
    /// Stationary AR(1): x₀ ~ N(0,1), x_k = ρ·x_{k−1} + √(1−ρ²)·ξ_k.
    Ar1 { rho: f64, innovation: f64 },
    /// Dense lower-triangular factor L with LLᵀ = covariance, row-major.
    Cholesky { factor: Vec<f64> },
}

/// Sampler for a centred Gaussian field with unit marginals and prescribed
/// pair correlations.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mode: SamplerMode,
    n: usize,
}

impl GaussianSampler {
    /// Number of sites per field draw.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Which sampling strategy is in use (`"ar1"` or `"cholesky"`).
    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            SamplerMode::Ar1 { .. } => "ar1",
            SamplerMode::Cholesky { .. } => "cholesky",
        }
    }

    /// Draw one field into `out`; `scratch` must be the same length.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64], scratch: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        match &self.mode {
            SamplerMode::Ar1 { rho, innovation } => {
                let mut prev: f64 = rng.sample(StandardNormal);
                out[0] = prev;
                for slot in out.iter_mut().skip(1) {
                    let xi: f64 = rng.sample(StandardNormal);
                    prev = rho * prev + innovation * xi;
                    *slot = prev;
                }
            }
            SamplerMode::Cholesky { factor } => {
                for z in scratch.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
                let n = self.n;
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot = factor[i * n..i * n + i + 1]
                        .iter()
                        .zip(&scratch[..i + 1])
                        .map(|(l, z)| l * z)
                        .sum();
                }
            }
        }
    }

    /// Draw one field as a fresh vector.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        let mut scratch = vec![0.0; self.n];
        self.sample_into(rng, &mut out, &mut scratch);
        out
    }
}

/// Build the field sampler for a box at inverse temperature β > 0.
///
/// One-dimensional boxes get the O(n)-per-draw autoregressive recursion,
/// whose lag-k correlation e^{−βk} reproduces the covariance exactly;
/// higher dimensions get a dense Cholesky factor of the covariance matrix,
/// computed once and reused.
pub fn build_sampler(lattice: &LatticeBox, beta: f64) -> Result<GaussianSampler, GaussianError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(GaussianError::BadBeta(beta));
    }
    let n = lattice.n_sites();
    if lattice.dim() == 1 {
        let rho = (-beta).exp();
        Ok(GaussianSampler {
            mode: SamplerMode::Ar1 {
                rho,
                innovation: (1.0 - rho * rho).sqrt(),
            },
            n,
        })
    } else {
        let kms = KmsMatrix::build(lattice, beta)?;
        sampler_from_covariance(kms.matrix())
    }
}

/// Build a sampler for an arbitrary symmetric positive-definite covariance.
pub fn sampler_from_covariance(cov: &SquareMatrix) -> Result<GaussianSampler, GaussianError> {
    let n = cov.n();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (cov.get(i, j), cov.get(j, i));
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(GaussianError::NotSymmetric { i, j, a, b });
            }
        }
    }
    let mut factor = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = KahanSum::new();
            s.add(cov.get(i, j));
            for k in 0..j {
                s.add(-factor[i * n + k] * factor[j * n + k]);
            }
            let s = s.value();
            if i == j {
                if s <= 1e-14 * cov.get(i, i).abs() {
                    return Err(GaussianError::DegenerateCovariance(i));
                }
                factor[i * n + i] = s.sqrt();
            } else {
                factor[i * n + j] = s / factor[j * n + j];
            }
        }
    }
    Ok(GaussianSampler {
        mode: SamplerMode::Cholesky { factor },
        n,
    })
}

/// Monte Carlo estimate of a log-scale mean with its uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    /// log of the estimated mean of ∏(X² + Y²).
    pub log_mean: f64,
    /// Batch-means standard error of `log_mean`.
    pub se_of_log: f64,
    /// Total samples drawn.
    pub n_samples: u64,
    /// Number of independent batches behind the error bar (≥ 20).
    pub batch_count: usize,
    /// Effective sample size implied by the dispersion of the log samples:
    /// (Σw)²/Σw² for weights w proportional to each sample's product.
    /// Values far below `n_samples` flag a heavy-tail-dominated average.
    pub ess: f64,
}

impl MomentEstimate {
    /// The log-permanent implied by a moment of an n-site product:
    /// `log_mean − n·log 2`.
    pub fn log_permanent(&self, n: usize) -> f64 {
        self.log_mean - n as f64 * std::f64::consts::LN_2
    }
}

/// Estimate log E[∏_x (X_x² + Y_x²)] for the box field at inverse
/// temperature β.
///
/// The result estimates `log(2ⁿ · perm(A))` for the box's covariance
/// matrix A. Deterministic given `seed`: batches run on numbered RNG
/// streams and merge in batch order, so the estimate is bit-identical for
/// any worker count.
pub fn estimate_moment(
    lattice: &LatticeBox,
    beta: f64,
    n_samples: u64,
    seed: u64,
) -> Result<MomentEstimate, GaussianError> {
    let n = lattice.n_sites();
    if n > MOMENT_CEILING {
        return Err(GaussianError::TooManySites(n));
    }
    let sampler = build_sampler(lattice, beta)?;
    run_moment(&sampler, n_samples, seed)
}

/// Estimate the permanent of a symmetric positive-definite matrix by the
/// Gaussian-moment identity: the returned `log_mean` estimates
/// `log(2ⁿ · perm(A))`, so [`MomentEstimate::log_permanent`] recovers the
/// log-permanent itself.
pub fn reed_check(
    matrix: &SquareMatrix,
    n_samples: u64,
    seed: u64,
) -> Result<MomentEstimate, GaussianError> {
    if matrix.n() > MOMENT_CEILING {
        return Err(GaussianError::TooManySites(matrix.n()));
    }
    let sampler = sampler_from_covariance(matrix)?;
    run_moment(&sampler, n_samples, seed)
}

fn run_moment(
    sampler: &GaussianSampler,
    n_samples: u64,
    seed: u64,
) -> Result<MomentEstimate, GaussianError> {
    if n_samples < MIN_SAMPLES {
        return Err(GaussianError::TooFewSamples(n_samples));
    }
    let batch_count: usize = if n_samples >= 100_000 { 100 } else { 20 };

    struct BatchMoments {
        count: u64,
        lse: f64,
        lse2: f64,
    }

    let batches: Vec<BatchMoments> = (0..batch_count)
        .into_par_iter()
        .map(|b| {
            let lo = b as u64 * n_samples / batch_count as u64;
            let hi = (b as u64 + 1) * n_samples / batch_count as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let n = sampler.n();
            let (mut x, mut y, mut scratch) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let mut logs = Vec::with_capacity((hi - lo) as usize);
            for _ in lo..hi {
                sampler.sample_into(&mut rng, &mut x, &mut scratch);
                sampler.sample_into(&mut rng, &mut y, &mut scratch);
                let log_product: f64 = x
                    .iter()
                    .zip(&y)
                    .map(|(&a, &b)| (a * a + b * b).ln())
                    .sum();
                logs.push(log_product);
            }
            let doubled: Vec<f64> = logs.iter().map(|v| 2.0 * v).collect();
            BatchMoments {
                count: hi - lo,
                lse: log_sum_exp(&logs),
                lse2: log_sum_exp(&doubled),
            }
        })
        .collect();

    let lse_total = log_sum_exp(&batches.iter().map(|b| b.lse).collect::<Vec<_>>());
    let lse2_total = log_sum_exp(&batches.iter().map(|b| b.lse2).collect::<Vec<_>>());
    let batch_logs: Vec<f64> = batches
        .iter()
        .map(|b| b.lse - (b.count as f64).ln())
        .collect();
    Ok(MomentEstimate {
        log_mean: lse_total - (n_samples as f64).ln(),
        se_of_log: batch_means_standard_error(&batch_logs),
        n_samples,
        batch_count,
        ess: (2.0 * lse_total - lse2_total).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permanent::permanent_exact;

    fn box1(side: usize) -> LatticeBox {
        LatticeBox::new(1, side).unwrap()
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(matches!(
            build_sampler(&box1(3), 0.0),
            Err(GaussianError::BadBeta(_))
        ));
        assert!(matches!(
            build_sampler(&box1(3), -1.0),
            Err(GaussianError::BadBeta(_))
        ));
        assert!(matches!(
            estimate_moment(&box1(13), 0.5, 10_000, 1),
            Err(GaussianError::TooManySites(13))
        ));
        assert!(matches!(
            estimate_moment(&box1(3), 0.5, 999, 1),
            Err(GaussianError::TooFewSamples(999))
        ));
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let all_ones = SquareMatrix::from_fn(3, |_, _| 1.0);
        assert!(matches!(
            sampler_from_covariance(&all_ones),
            Err(GaussianError::DegenerateCovariance(1))
        ));
        let skew = SquareMatrix::from_fn(2, |i, j| if i < j { 0.5 } else if i > j { 0.4 } else { 1.0 });
        assert!(matches!(
            sampler_from_covariance(&skew),
            Err(GaussianError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sampler_modes_match_dimension() {
        assert_eq!(build_sampler(&box1(5), 0.7).unwrap().mode_name(), "ar1");
        let b2 = LatticeBox::new(2, 2).unwrap();
        assert_eq!(build_sampler(&b2, 0.7).unwrap().mode_name(), "cholesky");
    }

    #[test]
    fn ar1_lag_correlations_match_decay() {
        let beta = 0.4;
        let sampler = build_sampler(&box1(6), beta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 1_000_000;
        let mut cross = [KahanSum::new(), KahanSum::new(), KahanSum::new()];
        let mut var0 = KahanSum::new();
        let (mut x, mut scratch) = (vec![0.0; 6], vec![0.0; 6]);
        for _ in 0..draws {
            sampler.sample_into(&mut rng, &mut x, &mut scratch);
            var0.add(x[0] * x[0]);
            for (k, slot) in cross.iter_mut().enumerate() {
                slot.add(x[0] * x[k + 1]);
            }
        }
        assert!((var0.value() / draws as f64 - 1.0).abs() <= 5e-3);
        for (k, slot) in cross.iter().enumerate() {
            let observed = slot.value() / draws as f64;
            let expected = (-beta * (k + 1) as f64).exp();
            assert!(
                (observed - expected).abs() <= 5e-3,
                "lag {}: {observed} vs {expected}",
                k + 1
            );
        }
    }

    #[test]
    fn d2_sample_covariance_matches_kernel_matrix() {
        let b = LatticeBox::new(2, 2).unwrap();
        let beta = 0.7;
        let sampler = build_sampler(&b, beta).unwrap();
        let kms = KmsMatrix::build(&b, beta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 1_000_000;
        let mut acc = vec![KahanSum::new(); 16];
        let (mut x, mut scratch) = (vec![0.0; 4], vec![0.0; 4]);
        for _ in 0..draws {
            sampler.sample_into(&mut rng, &mut x, &mut scratch);
            for i in 0..4 {
                for j in 0..4 {
                    acc[i * 4 + j].add(x[i] * x[j]);
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let observed = acc[i * 4 + j].value() / draws as f64;
                let expected = kms.matrix().get(i, j);
                assert!(
                    (observed - expected).abs() <= 5e-3,
                    "cov[{i}][{j}] = {observed} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn single_site_moment_is_log_two() {
        let est = estimate_moment(&box1(1), 1.0, 50_000, 11).unwrap();
        assert!(
            (est.log_mean - 2.0f64.ln()).abs() <= 3.0 * est.se_of_log,
            "log mean {} (se {})",
            est.log_mean,
            est.se_of_log
        );
        assert!(est.ess > 0.0 && est.ess <= est.n_samples as f64);
        assert!(est.batch_count >= 20);
    }

    #[test]
    fn two_site_moment_matches_closed_form() {
        // E = 2²·perm([[1, ρ], [ρ, 1]]) with ρ = e^{−1}.
        let exact = (4.0 * (1.0 + (-2.0f64).exp())).ln();
        let est = estimate_moment(&box1(2), 1.0, 200_000, 7).unwrap();
        assert!(
            (est.log_mean - exact).abs() <= 3.0 * est.se_of_log,
            "log mean {} vs {exact} (se {})",
            est.log_mean,
            est.se_of_log
        );
    }

    #[test]
    fn frozen_limit_recovers_identity_permanent() {
        // At β = 20 the covariance is numerically the identity and the
        // permanent is 1, so the moment is log 2³.
        let est = estimate_moment(&box1(3), 20.0, 50_000, 3).unwrap();
        assert!(
            (est.log_mean - 3.0 * 2.0f64.ln()).abs() <= 3.0 * est.se_of_log,
            "log mean {} (se {})",
            est.log_mean,
            est.se_of_log
        );
        assert!((est.log_permanent(3) - 0.0).abs() <= 3.0 * est.se_of_log);
    }

    #[test]
    fn reed_identity_permanents() {
        let one = SquareMatrix::from_fn(1, |_, _| 1.0);
        let est = reed_check(&one, 20_000, 19).unwrap();
        assert!((est.log_permanent(1) - 0.0).abs() <= 3.0 * est.se_of_log);

        // Near-degenerate two-site covariance: permanent → 2.
        let b = KmsMatrix::build(&box1(2), 1e-6).unwrap();
        let est = reed_check(b.matrix(), 100_000, 23).unwrap();
        assert!(
            (est.log_permanent(2) - 2.0f64.ln()).abs() <= 3.0 * est.se_of_log,
            "log perm {} (se {})",
            est.log_permanent(2),
            est.se_of_log
        );
    }

    #[test]
    fn reed_matches_exact_permanent() {
        let beta = 0.5;
        let b = box1(4);
        let exact = permanent_exact(KmsMatrix::build(&b, beta).unwrap().matrix()).unwrap();
        let est = reed_check(KmsMatrix::build(&b, beta).unwrap().matrix(), 400_000, 31).unwrap();
        assert!(
            (est.log_permanent(4) - exact.ln()).abs() <= 3.0 * est.se_of_log,
            "estimate {} vs exact {} (se {})",
            est.log_permanent(4),
            exact.ln(),
            est.se_of_log
        );
    }

    #[test]
    fn moment_estimates_reproduce_bitwise() {
        let a = estimate_moment(&box1(4), 0.8, 10_000, 99).unwrap();
        let b = estimate_moment(&box1(4), 0.8, 10_000, 99).unwrap();
        assert_eq!(a, b);
        let c = estimate_moment(&box1(4), 0.8, 10_000, 100).unwrap();
        assert_ne!(a.log_mean, c.log_mean);
    }

    #[test]
    fn per_sample_product_is_symmetric_in_the_two_fields() {
        let sampler = build_sampler(&box1(5), 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let x = sampler.sample(&mut rng);
            let y = sampler.sample(&mut rng);
            let xy: f64 = x.iter().zip(&y).map(|(&a, &b)| (a * a + b * b).ln()).sum();
            let yx: f64 = y.iter().zip(&x).map(|(&a, &b)| (a * a + b * b).ln()).sum();
            assert_eq!(xy.to_bits(), yx.to_bits());
        }
    }
}
