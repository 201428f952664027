//! Exact permanents, log-partition values, and displacement intervals.
//!
//! The partition function of the displacement model equals the permanent of
//! the kernel matrix: `Z = Σ_π e^{−βH(π)} = perm(A)` with
//! `A_{x,y} = e^{−β|x−y|}`. This module computes that permanent exactly, plus
//! the quantities derived from it: the per-site log-partition value, a
//! row-sum upper bound, a rigorous finite-difference enclosure of the mean
//! displacement, and the asymptotic per-site predictions for each regime.
//!
//! # Algorithm
//!
//! `permanent_exact` evaluates Glynn's formula
//!
//! ```text
//!     perm(A) = 2^{1−n} Σ_{δ ∈ {±1}^n, δ_1 = +1} (Π_i δ_i) Π_i (Σ_j δ_j a_ij)
//! ```
//!
//! walking the 2^{n−1} sign vectors in Gray-code order so each step updates
//! the n running row sums in O(n). Glynn is preferred over the Ryser subset
//! sum for conditioning: its terms are bounded by the row-sum product, so the
//! cancellation ratio Σ|term|/|perm| stays ~1e4 even at n = 30, β = 0, where
//! Ryser's ratio (~1e15) would swamp f64. Rows are pre-scaled to unit sums
//! (`perm(DA) = det(D)·perm(A)` for diagonal D), which caps every partial
//! product at 1 in magnitude — no overflow at any order — with the scaling
//! re-applied in log space at the end.
//!
//! # Cost model
//!
//! ~2^{n−1}·n multiply-adds: n = 20 → ~10⁷ (milliseconds), n = 26 → ~10⁹
//! (about a second), n = 30 → ~1.6·10¹⁰ (tens of seconds, parallel). The
//! hard ceiling keeps runs desk-scale; raise it consciously via
//! [`permanent_exact_with_ceiling`].

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{LatticeBox, LatticeError};
use crate::matrix::{KmsMatrix, MatrixError, SquareMatrix};
use crate::numeric::{ln_factorial, KahanSum, LogValue};
use crate::ode::{self, OdeError};

/// Default hard size ceiling for exact permanents.
pub const DEFAULT_PERMANENT_CEILING: usize = 30;

/// Size ceiling for the brute-force oracle.
pub const BRUTEFORCE_CEILING: usize = 9;

/// Errors from the permanent engine.
#[derive(Debug, Error)]
pub enum PermanentError {
    #[error("matrix order {n} exceeds the ceiling {ceiling} for this routine")]
    TooLarge { n: usize, ceiling: usize },
    #[error("matrix must have nonnegative entries and positive row sums (row {row})")]
    BadRow { row: usize },
    #[error("finite-difference step {delta} must satisfy 0 < delta < beta = {beta}")]
    BadStep { delta: f64, beta: f64 },
    #[error("accumulated permanent sum is not positive ({0}); matrix outside supported class")]
    NonPositiveSum(f64),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("rate-function evaluation failed: {0}")]
    Rate(#[from] OdeError),
}

/// Exact permanent by direct enumeration of all n! permutations.
///
/// The oracle for [`permanent_exact`]: dead simple, obviously correct, and
/// restricted to n ≤ 9 (9! ≈ 3.6·10⁵ permutations). Products are recomputed
/// from scratch per permutation and accumulated with compensation.
pub fn permanent_bruteforce(a: &SquareMatrix) -> Result<LogValue, PermanentError> {
    let n = a.n();
    if n > BRUTEFORCE_CEILING {
        return Err(PermanentError::TooLarge {
            n,
            ceiling: BRUTEFORCE_CEILING,
        });
    }
    if n == 0 {
        return Ok(LogValue::from_ln(0.0)); // empty product: perm = 1
    }
    let mut acc = KahanSum::new();
    let mut cols: Vec<usize> = (0..n).collect();
    // Heap's algorithm, iterative form.
    let mut counters = vec![0usize; n];
    let mut add_term = |cols: &[usize]| {
        let mut prod = 1.0;
        for (i, &j) in cols.iter().enumerate() {
            prod *= a.get(i, j);
        }
        acc.add(prod);
    };
    add_term(&cols);
    let mut i = 1;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                cols.swap(0, i);
            } else {
                cols.swap(counters[i], i);
            }
            add_term(&cols);
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    let total = acc.value();
    if !(total > 0.0) {
        return Err(PermanentError::NonPositiveSum(total));
    }
    Ok(LogValue::from_ln(total.ln()))
}

/// Exact permanent of a nonnegative matrix, in log scale, with the default
/// size ceiling.
pub fn permanent_exact(a: &SquareMatrix) -> Result<LogValue, PermanentError> {
    permanent_exact_with_ceiling(a, DEFAULT_PERMANENT_CEILING)
}

/// Exact permanent with an explicit size ceiling (see module docs for the
/// 2^{n−1}·n cost model before raising it).
pub fn permanent_exact_with_ceiling(
    a: &SquareMatrix,
    ceiling: usize,
) -> Result<LogValue, PermanentError> {
    let n = a.n();
    if n > ceiling || n > 63 {
        return Err(PermanentError::TooLarge {
            n,
            ceiling: ceiling.min(63),
        });
    }
    if n == 0 {
        return Ok(LogValue::from_ln(0.0));
    }

    // Scale each row to unit sum; carry Σ log r_i separately. This bounds
    // every Glynn partial product by 1 in magnitude, so no intermediate can
    // overflow regardless of n or β.
    let mut log_scale = KahanSum::new();
    let mut scaled = Vec::with_capacity(n * n);
    for i in 0..n {
        let r: f64 = a.row(i).iter().sum();
        if !(r > 0.0) || a.row(i).iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(PermanentError::BadRow { row: i });
        }
        log_scale.add(r.ln());
        scaled.extend(a.row(i).iter().map(|&v| v / r));
    }
    let a_hat = SquareMatrix::from_rows(n, scaled).expect("square by construction");

    // Fixed chunk layout independent of thread count: reductions combine in
    // chunk order, so results are bit-identical however the pool schedules.
    let total_signs: u64 = 1 << (n - 1);
    let chunk_bits = (n - 1).min(10);
    let n_chunks: u64 = 1 << chunk_bits;
    let chunk_len = total_signs >> chunk_bits;

    let partials: Vec<KahanSum> = (0..n_chunks)
        .into_par_iter()
        .map(|c| glynn_chunk(&a_hat, c * chunk_len, (c + 1) * chunk_len))
        .collect();
    let mut acc = KahanSum::new();
    for p in &partials {
        acc.merge(p);
    }

    let total = acc.value();
    if !(total > 0.0) {
        return Err(PermanentError::NonPositiveSum(total));
    }
    // perm(A) = (Π r_i) · 2^{1−n} · total
    let ln_perm =
        log_scale.value() + (1.0 - n as f64) * std::f64::consts::LN_2 + total.ln();
    Ok(LogValue::from_ln(ln_perm))
}

/// Sum Glynn terms for Gray-code indices `k0..k1` over a row-normalized
/// matrix. Each chunk rebuilds its starting row sums in O(n²) and then walks
/// in O(n) per step, owning all of its state.
fn glynn_chunk(a_hat: &SquareMatrix, k0: u64, k1: u64) -> KahanSum {
    let n = a_hat.n();
    let g0 = k0 ^ (k0 >> 1);

    // Row sums Σ_j δ_j a_ij at the chunk's first sign vector. Bit b of the
    // Gray code set means δ for column b+1 is −1; column 0 is pinned at +1.
    let mut s: Vec<f64> = (0..n)
        .map(|i| {
            let row = a_hat.row(i);
            let mut sum = row[0];
            for (b, &v) in row[1..].iter().enumerate() {
                sum += if (g0 >> b) & 1 == 1 { -v } else { v };
            }
            sum
        })
        .collect();
    let mut sign = if g0.count_ones() % 2 == 0 { 1.0 } else { -1.0 };

    let product = |s: &[f64]| -> f64 { s.iter().product() };

    let mut acc = KahanSum::new();
    acc.add(sign * product(&s));
    let mut g = g0;
    for k in (k0 + 1)..k1 {
        let b = k.trailing_zeros() as usize;
        g ^= 1 << b;
        let col = b + 1;
        // Bit set after the flip: δ_col moved +1 → −1, so subtract 2a; the
        // reverse flip adds it back.
        let step = if (g >> b) & 1 == 1 { -2.0 } else { 2.0 };
        for (i, si) in s.iter_mut().enumerate() {
            *si += step * a_hat.get(i, col);
        }
        // Flipping one δ toggles the sign of Π δ_i.
        sign = -sign;
        acc.add(sign * product(&s));
    }
    acc
}

/// log Z(β) = log perm(A) for the box's kernel matrix.
///
/// At β = 0 this is log((N^d)!) — the uniform count.
pub fn log_partition(lattice: &LatticeBox, beta: f64) -> Result<LogValue, PermanentError> {
    let a = KmsMatrix::build(lattice, beta)?;
    permanent_exact(a.matrix())
}

/// Row-sum upper bound `perm(A) ≤ Π_i r_i`, returned as Σ_i log r_i.
///
/// Valid for matrices with nonnegative entries; always ≥ the exact value.
pub fn row_sum_upper_bound(a: &SquareMatrix) -> Result<LogValue, PermanentError> {
    let mut acc = KahanSum::new();
    for i in 0..a.n() {
        let r = a.row_sum(i);
        if !(r > 0.0) {
            return Err(PermanentError::BadRow { row: i });
        }
        acc.add(r.ln());
    }
    Ok(LogValue::from_ln(acc.value()))
}

/// Rigorous enclosure of the mean displacement per site from three
/// log-partition values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementInterval {
    /// Forward difference of F(β) = −(1/N^d) log Z — the lower bound.
    pub lower: f64,
    /// Backward difference — the upper bound.
    pub upper: f64,
    /// Step actually used.
    pub delta: f64,
}

impl DisplacementInterval {
    /// Interval width (O(δ) for smooth F).
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Midpoint, the natural point estimate.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Whether a value lies inside the enclosure.
    pub fn contains(&self, d: f64) -> bool {
        self.lower <= d && d <= self.upper
    }
}

/// Default finite-difference step: balances the O(δ) enclosure width against
/// rounding noise in log Z differences.
pub fn default_fd_step(beta: f64) -> f64 {
    (1e-3 * beta).max(1e-4)
}

/// Enclose the mean displacement per site `D(β) = F'(β)`,
/// `F(β) = −(1/N^d) log Z(β)`, between one-sided difference quotients.
///
/// `(1/N^d) log Z` is convex and strictly decreasing in β, so F is concave
/// increasing and its forward difference at step δ is a lower bound for
/// `F'(β)`, the backward difference an upper bound. The returned interval is
/// a rigorous enclosure up to permanent round-off (~1e−12 relative).
pub fn mean_displacement_interval(
    lattice: &LatticeBox,
    beta: f64,
    delta: Option<f64>,
) -> Result<DisplacementInterval, PermanentError> {
    let delta = delta.unwrap_or_else(|| default_fd_step(beta));
    if !(delta > 0.0) || delta >= beta {
        return Err(PermanentError::BadStep { delta, beta });
    }
    let n_sites = lattice.n_sites() as f64;
    let f = |b: f64| -> Result<f64, PermanentError> {
        Ok(-log_partition(lattice, b)?.ln() / n_sites)
    };
    let f_minus = f(beta - delta)?;
    let f_mid = f(beta)?;
    let f_plus = f(beta + delta)?;
    Ok(DisplacementInterval {
        lower: (f_plus - f_mid) / delta,
        upper: (f_mid - f_minus) / delta,
        delta,
    })
}

/// Exact mean displacement per site of the *uniform* (β = 0) model in d = 1:
/// `(N² − 1) / (3N) = N/3 − 1/(3N)`.
pub fn uniform_mean_displacement_d1(n_side: usize) -> f64 {
    let n = n_side as f64;
    (n * n - 1.0) / (3.0 * n)
}

/// Coupling regime of a (β, N) pair, classified by c = βN.
///
/// Fixed desk-scale conventions (documented cutoffs, not claims): the
/// asymptotic statements themselves hold in the limits β ≪ 1/N, β ~ c/N,
/// and 1/N ≪ β ≪ 1 respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// βN ≤ 0.1 — displacement ~ Θ(N), permanent near the uniform count.
    Subcritical,
    /// 0.1 < βN ≤ 10 — the c = βN window with nontrivial rate correction.
    Critical,
    /// βN > 10 — displacement ~ Θ(1/β), banded permutations.
    Supercritical,
}

impl Regime {
    /// CSV / display tag.
    pub fn tag(&self) -> &'static str {
        match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        }
    }
}

/// Classify (β, N) by c = βN using the fixed cutoffs 0.1 and 10.
pub fn classify_regime(n_side: usize, beta: f64) -> Regime {
    let c = beta * n_side as f64;
    if c <= 0.1 {
        Regime::Subcritical
    } else if c <= 10.0 {
        Regime::Critical
    } else {
        Regime::Supercritical
    }
}

/// Asymptotic per-site log-permanent prediction with its error order.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticPrediction {
    pub regime: Regime,
    /// Predicted (1/N^d) log perm(A).
    pub per_site: f64,
    /// Stated error order of the prediction (metadata, not a numeric bound).
    pub error_order: &'static str,
}

/// Per-site log-permanent prediction for a given box and β.
///
/// d = 1 has a complete set of lines:
/// * supercritical: `log(2/β) − 1`, error `O(β) + O(1/(βN))`;
/// * critical (c = βN): `(1/N) log N! + g¹(c)`, error `o(1)`;
/// * subcritical: `(1/N) log N! − β(N/3 − 1/(3N))`, error `O(β²N²)`.
///
/// For d ≥ 2 only the supercritical envelope `log(1/β^d)` is available with
/// an O(1) additive band; the critical/subcritical rows report the uniform
/// per-site value `(1/N^d) log((N^d)!)` with an O(1)/o(1) band, since no
/// explicit rate constant exists in d ≥ 2.
///
/// If `regime` is `None` it is auto-classified via [`classify_regime`].
pub fn asymptotic_log_permanent(
    lattice: &LatticeBox,
    beta: f64,
    regime: Option<Regime>,
) -> Result<AsymptoticPrediction, PermanentError> {
    let d = lattice.dim();
    let n_side = lattice.side();
    let regime = regime.unwrap_or_else(|| classify_regime(n_side, beta));
    let n_sites = lattice.n_sites() as f64;
    let uniform_per_site = ln_factorial(lattice.n_sites()) / n_sites;

    let (per_site, error_order) = match (d, regime) {
        (1, Regime::Supercritical) => ((2.0 / beta).ln() - 1.0, "O(beta) + O(1/(beta*N))"),
        (1, Regime::Critical) => {
            let c = beta * n_side as f64;
            let g = ode::g1(c, ode::DEFAULT_TOL)?;
            (uniform_per_site + g.value, "o(1)")
        }
        (1, Regime::Subcritical) => {
            let n = n_side as f64;
            (
                uniform_per_site - beta * (n / 3.0 - 1.0 / (3.0 * n)),
                "O(beta^2 * N^2)",
            )
        }
        (_, Regime::Supercritical) => (-(d as f64) * beta.ln(), "O(1)"),
        (_, Regime::Critical) => (uniform_per_site, "O(1): rate constant unknown for d >= 2"),
        (_, Regime::Subcritical) => (uniform_per_site, "o(1)"),
    };
    Ok(AsymptoticPrediction {
        regime,
        per_site,
        error_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_ones(n: usize) -> SquareMatrix {
        SquareMatrix::from_fn(n, |_, _| 1.0)
    }

    #[test]
    fn bruteforce_all_ones_is_factorial() {
        // perm of the all-ones n×n matrix is n!.
        let p = permanent_bruteforce(&all_ones(3)).unwrap();
        assert!((p.ln() - 6.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn bruteforce_two_site_kernel() {
        let b = LatticeBox::new(1, 2).unwrap();
        let a = KmsMatrix::build(&b, 1.0).unwrap();
        // Two permutations: identity (product 1) and the swap (e^{−2}).
        let expect = (1.0 + (-2.0f64).exp()).ln();
        let p = permanent_bruteforce(a.matrix()).unwrap();
        assert!((p.ln() - expect).abs() < 1e-14);
    }

    #[test]
    fn bruteforce_rejects_large() {
        assert!(matches!(
            permanent_bruteforce(&all_ones(10)),
            Err(PermanentError::TooLarge { .. })
        ));
    }

    #[test]
    fn exact_all_ones_is_factorial() {
        for n in 1..=12 {
            let p = permanent_exact(&all_ones(n)).unwrap();
            let expect = ln_factorial(n);
            assert!(
                (p.ln() - expect).abs() <= 1e-12 * expect.max(1.0),
                "n = {n}: {} vs {}",
                p.ln(),
                expect
            );
        }
    }

    #[test]
    fn exact_two_site_kernel_halfbeta() {
        let b = LatticeBox::new(1, 2).unwrap();
        let a = KmsMatrix::build(&b, 0.5).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        let p = permanent_exact(a.matrix()).unwrap();
        assert!((p.ln() - expect).abs() < 1e-14);
    }

    #[test]
    fn exact_rejects_above_ceiling() {
        let a = SquareMatrix::from_fn(31, |_, _| 1.0);
        assert!(matches!(
            permanent_exact(&a),
            Err(PermanentError::TooLarge { .. })
        ));
    }

    #[test]
    fn log_partition_uniform_is_factorial() {
        let b = LatticeBox::new(1, 4).unwrap();
        let z = log_partition(&b, 0.0).unwrap();
        assert!((z.ln() - 24.0f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn three_site_partition_closed_form() {
        // Energy multiset over the 6 permutations of 3 sites: {0, 2, 2, 4, 4, 4}.
        for beta in [0.3, 1.0] {
            let b = LatticeBox::new(1, 3).unwrap();
            let z = log_partition(&b, beta).unwrap();
            let expect = (1.0 + 2.0 * (-2.0 * beta).exp() + 3.0 * (-4.0 * beta).exp()).ln();
            assert!((z.ln() - expect).abs() < 1e-13, "beta = {beta}");
        }
    }

    #[test]
    fn row_sum_bound_all_ones() {
        let bound = row_sum_upper_bound(&all_ones(5)).unwrap();
        assert!((bound.ln() - 5.0 * 5.0f64.ln()).abs() < 1e-13);
        assert!(bound.ln() >= ln_factorial(5));
    }

    #[test]
    fn row_sum_bound_dominates_two_site() {
        let b = LatticeBox::new(1, 2).unwrap();
        let a = KmsMatrix::build(&b, 1.0).unwrap();
        let bound = row_sum_upper_bound(a.matrix()).unwrap();
        let exact = permanent_exact(a.matrix()).unwrap();
        assert!((bound.ln() - 2.0 * (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-14);
        assert!(bound.ln() >= exact.ln());
    }

    #[test]
    fn displacement_interval_two_site_closed_form() {
        // D(β) for N = 2 in closed form: e^{−2β} / (1 + e^{−2β}).
        let b = LatticeBox::new(1, 2).unwrap();
        let beta = 1.0;
        let true_d = (-2.0f64).exp() / (1.0 + (-2.0f64).exp());
        let iv = mean_displacement_interval(&b, beta, Some(1e-4)).unwrap();
        assert!(iv.lower <= iv.upper);
        assert!(iv.contains(true_d), "{iv:?} vs {true_d}");
        assert!(iv.width() < 1e-3);
    }

    #[test]
    fn displacement_interval_shrinks_with_delta() {
        let b = LatticeBox::new(1, 3).unwrap();
        let wide = mean_displacement_interval(&b, 0.3, Some(1e-2)).unwrap();
        let narrow = mean_displacement_interval(&b, 0.3, Some(1e-3)).unwrap();
        assert!(narrow.width() < wide.width());
        // Width is O(δ): a 10× smaller step shrinks the width ~10×.
        assert!(narrow.width() < 0.2 * wide.width());
    }

    #[test]
    fn displacement_interval_rejects_bad_step() {
        let b = LatticeBox::new(1, 3).unwrap();
        assert!(matches!(
            mean_displacement_interval(&b, 0.1, Some(0.2)),
            Err(PermanentError::BadStep { .. })
        ));
    }

    #[test]
    fn regime_classification_cutoffs() {
        assert_eq!(classify_regime(100, 0.0005), Regime::Subcritical);
        assert_eq!(classify_regime(100, 0.001), Regime::Subcritical); // c = 0.1 inclusive
        assert_eq!(classify_regime(100, 0.05), Regime::Critical);
        assert_eq!(classify_regime(100, 0.2), Regime::Supercritical);
    }

    #[test]
    fn asymptotic_subcritical_beta_zero_is_uniform() {
        let b = LatticeBox::new(1, 6).unwrap();
        let p = asymptotic_log_permanent(&b, 0.0, None).unwrap();
        assert_eq!(p.regime, Regime::Subcritical);
        assert!((p.per_site - ln_factorial(6) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_supercritical_line() {
        let b = LatticeBox::new(1, 1000).unwrap();
        let p = asymptotic_log_permanent(&b, 0.1, None).unwrap();
        assert_eq!(p.regime, Regime::Supercritical);
        assert!((p.per_site - (20.0f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn uniform_displacement_closed_form() {
        assert!((uniform_mean_displacement_d1(8) - (8.0 / 3.0 - 1.0 / 24.0)).abs() < 1e-15);
    }
}
