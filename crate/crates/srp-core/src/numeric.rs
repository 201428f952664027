//! Shared numeric plumbing: log-scale values, compensated summation,
//! log-sum-exp reductions, Gauss–Legendre quadrature, and log-factorials.
//!
//! Everything downstream that touches partition functions works in natural
//! logs — `n!` alone overflows f64 near n = 171, and Gaussian product moments
//! overflow much sooner — so the conversions live here, once.

use thiserror::Error;

/// Errors from numeric helpers.
#[derive(Debug, Error, PartialEq)]
pub enum NumericError {
    /// A quantity that must be strictly positive was not.
    #[error("expected a positive value, got {0}")]
    NotPositive(f64),
}

/// A positive quantity stored as its natural log.
///
/// All magnitudes in this crate (permanents, partition functions, Gaussian
/// moments) are strictly positive, so no sign bookkeeping is carried: the
/// sign is `+1` by construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogValue {
    ln: f64,
}

impl LogValue {
    /// Wrap an already-computed natural log.
    pub fn from_ln(ln: f64) -> Self {
        Self { ln }
    }

    /// Take the log of a positive value.
    pub fn from_positive(x: f64) -> Result<Self, NumericError> {
        if !(x > 0.0) {
            return Err(NumericError::NotPositive(x));
        }
        Ok(Self { ln: x.ln() })
    }

    /// The stored natural log.
    pub fn ln(&self) -> f64 {
        self.ln
    }

    /// Back to linear scale (may overflow to `inf` for huge magnitudes;
    /// callers that care stay in log scale).
    pub fn value(&self) -> f64 {
        self.ln.exp()
    }
}

/// Kahan–Babuška compensated accumulator.
///
/// Keeps the error of a length-k sum at O(ε) + O(kε²) instead of O(kε),
/// which matters both for 2^n-term permanent sums and for long displacement
/// averages.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one term.
    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    /// Merge another compensated sum (associative up to rounding; used by
    /// deterministic chunked reductions that combine in a fixed order).
    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(-other.comp);
    }

    /// Current value of the sum.
    pub fn value(&self) -> f64 {
        self.sum - self.comp
    }
}

/// log(Σ exp(v_i)) with max-shift stabilization and compensated summation.
///
/// Returns `-inf` for an empty slice (the empty sum).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add((v - m).exp());
    }
    m + acc.value().ln()
}

/// log of the arithmetic mean of exp(v_i).
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

/// Effective sample size `(Σ w)² / Σ w²` of weights given in log scale.
///
/// Equal weights give exactly `n`; a single dominating weight gives ≈ 1.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    if log_weights.is_empty() {
        return 0.0;
    }
    let doubled: Vec<f64> = log_weights.iter().map(|&v| 2.0 * v).collect();
    (2.0 * log_sum_exp(log_weights) - log_sum_exp(&doubled)).exp()
}

/// Sample mean.
pub fn mean(values: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value() / values.len() as f64
}

/// Standard error of the grand mean from a set of equal-size batch means:
/// `sd(batches) / √B` with the usual B−1 variance denominator.
pub fn batch_means_standard_error(batch_means: &[f64]) -> f64 {
    let b = batch_means.len();
    if b < 2 {
        return f64::NAN;
    }
    let m = mean(batch_means);
    let mut acc = KahanSum::new();
    for &v in batch_means {
        let d = v - m;
        acc.add(d * d);
    }
    (acc.value() / ((b - 1) as f64 * b as f64)).sqrt()
}

/// ln(n!) — exact compensated summation of logs.
///
/// Accurate to a few ulps for every n this crate meets (site counts stay in
/// the thousands); the O(n) cost is irrelevant at that scale.
pub fn ln_factorial(n: usize) -> f64 {
    let mut acc = KahanSum::new();
    for k in 2..=n {
        acc.add((k as f64).ln());
    }
    acc.value()
}

/// Gauss–Legendre nodes and weights on [−1, 1].
///
/// Newton iteration on the Legendre polynomial recurrence (the classic
/// construction); nodes are accurate to ~1 ulp for the orders used here
/// (up to a few thousand). Integrates polynomials of degree ≤ 2m−1 exactly.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mm = m.div_ceil(2);
    for i in 0..mm {
        // Chebyshev-based initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_m(x) and P'_m(x) by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            // P'_m via the stable derivative identity.
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// Affine map of [−1, 1] nodes/weights onto [lo, hi].
pub fn map_gauss_legendre(m: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(m);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    (
        xs.iter().map(|&x| mid + half * x).collect(),
        ws.iter().map(|&w| half * w).collect(),
    )
}

/// Brent's root finder on a bracketing interval.
///
/// `f(x0)` and `f(x1)` must have opposite signs (else `None`). Stops when the
/// bracket shrinks below `xtol` (plus machine slack) or `|f| ≤ ftol`, and
/// returns the best point with its residual; after `max_iter` iterations it
/// returns the current best, so callers should re-check the residual.
/// Combines bisection with secant/inverse-quadratic steps in the classic
/// arrangement — superlinear on smooth functions, never worse than bisection.
#[allow(clippy::too_many_arguments)] // the bracket (x0, x1, fx0, fx1) travels as four scalars
pub fn brent_root<F>(
    mut f: F,
    x0: f64,
    x1: f64,
    fx0: f64,
    fx1: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Option<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b, mut fa, mut fb) = (x0, x1, fx0, fx1);
    if fa == 0.0 {
        return Some((a, fa));
    }
    if fb == 0.0 {
        return Some((b, fb));
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 || fb.abs() <= ftol {
            return Some((b, fb));
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Secant (two points) or inverse quadratic (three) trial step.
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let t = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * t * (t - r) - (b - a) * (r - 1.0));
                q = (t - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                // Interpolation accepted.
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
        fb = f(b);
    }
    Some((b, fb))
}
