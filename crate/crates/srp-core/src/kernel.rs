//! Heat-semigroup operator expansion of the one-dimensional moment.
//!
//! For a 1-d box of side N the moment E = 2ᴺ·perm(A) factors through an
//! integral operator on radial functions of the plane: K = f·e^{tΔ}·f,
//! with weight f(s) = |s|·e^{(1−s²)/2}, semigroup time
//! t = (1−e^{−β})²/(4e^{−β}), and boundary profile
//! v(s) = |s|·e^{−γs²/2}, γ = (1+e^{−β})/(1−e^{−β}). Then
//!
//! ```text
//!     E = 2ᴺ · (e/π) · [e^{−β}(1+e^{−β})/(1−e^{−β})]
//!            · [e^{β}(1+e^{−β})/(e(1−e^{−β}))]ᴺ · ⟨v, K^{N−1} v⟩,
//! ```
//!
//! with inner products over the plane (measure 2π·r·dr on radial
//! functions). The module discretizes K on a Gauss–Legendre grid, iterates
//! it with log-space rescaling, reconstructs log E, and exposes the
//! spectral quantities (principal eigenvalue, Hilbert–Schmidt norm) plus a
//! closed form for the Gaussian moments I_k = ⟨v, f^{2(N+k)−2} v⟩.
//!
//! Rotational invariance reduces e^{tΔ} on radial functions to a
//! one-variable kernel with a modified Bessel factor:
//! (1/(2t))·e^{−(r²+r′²)/(4t)}·I₀(rr′/(2t)). I₀ overflows long before the
//! small times this module needs, so everything is computed through the
//! exponentially scaled Î₀(x) = e^{−x}I₀(x), which combines with the
//! Gaussian factor into the overflow-free form
//! (1/(2t))·e^{−(r−r′)²/(4t)}·Î₀(rr′/(2t)).

use rayon::prelude::*;
use thiserror::Error;

use crate::numeric::{ln_factorial, map_gauss_legendre, KahanSum};

/// Default truncation radius of the radial grid.
pub const DEFAULT_RADIUS: f64 = 8.0;

/// Default node count of the radial grid.
pub const DEFAULT_NODES: usize = 1024;

/// Smallest admissible truncation radius (the Gaussian-weighted profiles
/// carry no mass beyond it at any supported β).
pub const MIN_RADIUS: f64 = 6.0;

/// Smallest admissible node count.
pub const MIN_NODES: usize = 512;

/// Eigenvalue drift below which power iteration is declared converged.
const EIGEN_DRIFT: f64 = 1e-10;

/// Power-iteration budget.
const EIGEN_MAX_ITER: usize = 100_000;

/// Failures of operator construction and expansion evaluation.
#[derive(Debug, Error)]
pub enum KernelError {
    /// The construction needs strictly positive β.
    #[error("inverse temperature must be positive and finite, got {0}")]
    BadBeta(f64),
    /// Grid parameters below the supported floor.
    #[error("grid needs radius >= {MIN_RADIUS} and nodes >= {MIN_NODES}, got radius {radius}, nodes {nodes}")]
    BadGrid { radius: f64, nodes: usize },
    /// The expansion needs at least two copies of the kernel weight.
    #[error("box side must be at least 2, got {0}")]
    BadSide(usize),
    /// Moment order outside the admissible window.
    #[error("moment order k must satisfy -{n} <= k <= {n}, got {k}")]
    BadOrder { k: i64, n: usize },
    /// A grid vector of the wrong length was supplied.
    #[error("grid vector has length {found}, operator expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    /// Power iteration failed to settle.
    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// Exponentially scaled modified Bessel function Î₀(x) = e^{−x}·I₀(x).
///
/// For x ≤ 20 the all-positive power series of I₀ is summed directly (no
/// cancellation, no overflow below e^{709}) and scaled; beyond that the
/// large-argument expansion of Î₀ itself is summed to its floor, which is
/// below 1e−15 relative there. Accepts x ≥ 0.
pub fn scaled_bessel_i0(x: f64) -> f64 {
    debug_assert!(x >= 0.0, "Bessel argument must be nonnegative");
    if x <= 20.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        (-x).exp() * sum
    } else {
        // Î₀(x) ~ (2πx)^{−1/2} Σ_k Π_{j≤k}(2j−1)² / (k!·(8x)^k); the terms
        // shrink until k ≈ 2x, far past any accuracy this needs.
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            let next = term * (2.0 * k + 1.0) * (2.0 * k + 1.0) / (8.0 * x * (k + 1.0));
            if next >= term || next < 1e-17 * sum {
                sum += next;
                break;
            }
            sum += next;
            term = next;
            k += 1.0;
        }
        sum / (2.0 * std::f64::consts::PI * x).sqrt()
    }
}

/// Radial heat kernel of the plane at time t, reduced over angles:
/// the action of e^{tΔ} on a radial function g is
/// ∫₀^∞ heat_kernel_value(t, r, r′)·g(r′)·r′·dr′.
pub fn heat_kernel_value(t: f64, r: f64, rp: f64) -> f64 {
    let diff = r - rp;
    (0.5 / t) * (-diff * diff / (4.0 * t)).exp() * scaled_bessel_i0(r * rp / (2.0 * t))
}

/// Semigroup time t(β) = (1−e^{−β})²/(4e^{−β}), evaluated without
/// cancellation (t ≈ β²/4 for small β).
pub fn semigroup_time(beta: f64) -> f64 {
    let one_minus_rho = -(-beta).exp_m1();
    0.25 * one_minus_rho * one_minus_rho * beta.exp()
}

/// The evaluable radial weights of the expansion at a fixed β.
#[derive(Debug, Clone, Copy)]
pub struct RadialWeights {
    beta: f64,
    t: f64,
    gamma: f64,
}

impl RadialWeights {
    /// Semigroup time t(β).
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Gaussian decay rate γ(β) = (1+e^{−β})/(1−e^{−β}) of the boundary
    /// profile.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Generating inverse temperature.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Sandwich weight f(s) = |s|·e^{(1−s²)/2}; peaks at f(±1) = 1.
    pub fn f(&self, s: f64) -> f64 {
        s.abs() * (0.5 * (1.0 - s * s)).exp()
    }

    /// Boundary profile v(s) = |s|·e^{−γs²/2}.
    pub fn v(&self, s: f64) -> f64 {
        s.abs() * (-0.5 * self.gamma * s * s).exp()
    }
}

/// Build the evaluable weights (v, f) and the semigroup time for β > 0.
pub fn weight_functions(beta: f64) -> Result<RadialWeights, KernelError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(KernelError::BadBeta(beta));
    }
    let rho = (-beta).exp();
    Ok(RadialWeights {
        beta,
        t: semigroup_time(beta),
        gamma: (1.0 + rho) / (1.0 - rho),
    })
}

/// Node count giving adequate resolution of the heat kernel's width
/// √(2t) ≈ β/√2: the default grid below β = 0.05, a denser one beyond.
pub fn default_node_count(beta: f64) -> usize {
    if beta <= 0.05 {
        4 * DEFAULT_NODES
    } else {
        DEFAULT_NODES
    }
}

/// Discretized weighted heat-semigroup operator on radial functions.
///
/// Stores the action matrix K_ij = f(r_i)·h_t(r_i, r_j)·f(r_j)·r_j·w_j on
/// a Gauss–Legendre grid of (0, R], so that `apply` realizes g ↦ (f·e^{tΔ}·f)g
/// including the quadrature measure. All entries are finite and
/// nonnegative, and the build is deterministic in (β, R, M).
#[derive(Debug, Clone)]
pub struct RadialOperator {
    weights: RadialWeights,
    radius: f64,
    nodes: Vec<f64>,
    quad_weights: Vec<f64>,
    f_values: Vec<f64>,
    kernel: Vec<f64>,
}

/// Build the discretized operator for β > 0 on M nodes over (0, R].
pub fn build_radial_operator(
    beta: f64,
    radius: f64,
    nodes: usize,
) -> Result<RadialOperator, KernelError> {
    let weights = weight_functions(beta)?;
    if !(radius >= MIN_RADIUS) || nodes < MIN_NODES {
        return Err(KernelError::BadGrid { radius, nodes });
    }
    let (rs, ws) = map_gauss_legendre(nodes, 0.0, radius);
    let f_values: Vec<f64> = rs.iter().map(|&r| weights.f(r)).collect();
    let t = weights.t();
    let kernel: Vec<f64> = (0..nodes)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ri = rs[i];
            let fi = f_values[i];
            let rs = &rs;
            let ws = &ws;
            let f_values = &f_values;
            (0..nodes).map(move |j| fi * heat_kernel_value(t, ri, rs[j]) * f_values[j] * rs[j] * ws[j])
        })
        .collect();
    Ok(RadialOperator {
        weights,
        radius,
        nodes: rs,
        quad_weights: ws,
        f_values,
        kernel,
    })
}

impl RadialOperator {
    /// Generating inverse temperature.
    pub fn beta(&self) -> f64 {
        self.weights.beta()
    }

    /// Semigroup time.
    pub fn t(&self) -> f64 {
        self.weights.t()
    }

    /// Truncation radius.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Node count.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Quadrature nodes and weights.
    pub fn grid(&self) -> (&[f64], &[f64]) {
        (&self.nodes, &self.quad_weights)
    }

    /// The weights bundle in use.
    pub fn radial_weights(&self) -> &RadialWeights {
        &self.weights
    }

    /// One stored matrix entry (includes the quadrature measure).
    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.nodes.len() + j]
    }

    /// The boundary profile v sampled on the grid.
    pub fn v_grid(&self) -> Vec<f64> {
        self.nodes.iter().map(|&r| self.weights.v(r)).collect()
    }

    /// Apply the operator: out_i = Σ_j K_ij·g_j.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let m = self.nodes.len();
        debug_assert_eq!(g.len(), m);
        (0..m)
            .into_par_iter()
            .map(|i| {
                self.kernel[i * m..(i + 1) * m]
                    .iter()
                    .zip(g)
                    .map(|(k, v)| k * v)
                    .sum()
            })
            .collect()
    }

    /// Plane inner product of two radial grid functions:
    /// ⟨a, b⟩ = 2π·Σ_i a_i·b_i·r_i·w_i.
    pub fn weighted_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for i in 0..self.nodes.len() {
            acc.add(a[i] * b[i] * self.nodes[i] * self.quad_weights[i]);
        }
        2.0 * std::f64::consts::PI * acc.value()
    }
}

/// Power iteration on the operator (symmetric in the plane inner product),
/// optionally deflated against a previously found eigenvector.
fn power_iteration(
    op: &RadialOperator,
    deflate: Option<&[f64]>,
) -> Result<(f64, Vec<f64>), KernelError> {
    let m = op.n_nodes();
    let mut g = vec![1.0; m];
    let project = |vec: &mut Vec<f64>| {
        if let Some(dir) = deflate {
            let coeff = op.weighted_inner(vec, dir) / op.weighted_inner(dir, dir);
            for (x, d) in vec.iter_mut().zip(dir) {
                *x -= coeff * d;
            }
        }
    };
    project(&mut g);
    let mut prev = f64::INFINITY;
    for _ in 0..EIGEN_MAX_ITER {
        let mut kg = op.apply(&g);
        project(&mut kg);
        let lambda = op.weighted_inner(&g, &kg) / op.weighted_inner(&g, &g);
        let sup = kg.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        if sup == 0.0 {
            return Err(KernelError::NoConvergence(EIGEN_MAX_ITER));
        }
        for x in kg.iter_mut() {
            *x /= sup;
        }
        g = kg;
        if (lambda - prev).abs() <= EIGEN_DRIFT {
            return Ok((lambda, g));
        }
        prev = lambda;
    }
    Err(KernelError::NoConvergence(EIGEN_MAX_ITER))
}

/// Principal eigenvalue λ₁ of the operator, by power iteration from the
/// constant start vector until the Rayleigh quotient drifts by ≤ 1e−10.
/// The operator is positivity-improving, so λ₁ is simple and lies in
/// (0, 1).
pub fn principal_eigenvalue(op: &RadialOperator) -> Result<f64, KernelError> {
    power_iteration(op, None).map(|(l, _)| l)
}

/// The two leading eigenvalues (λ₁, λ₂), the second via one deflated
/// iteration; λ₂ < λ₁ strictly.
pub fn leading_eigenvalues(op: &RadialOperator) -> Result<(f64, f64), KernelError> {
    let (l1, v1) = power_iteration(op, None)?;
    let (l2, _) = power_iteration(op, Some(&v1))?;
    Ok((l1, l2))
}

/// log ⟨v, K^{N−1} v⟩ with per-application sup-norm rescaling; also
/// returns the accumulated log of the rescalings.
fn iterate_inner(
    op: &RadialOperator,
    v_grid: &[f64],
    n: usize,
) -> Result<(f64, f64), KernelError> {
    if n < 2 {
        return Err(KernelError::BadSide(n));
    }
    if v_grid.len() != op.n_nodes() {
        return Err(KernelError::LengthMismatch {
            expected: op.n_nodes(),
            found: v_grid.len(),
        });
    }
    let mut g = v_grid.to_vec();
    let mut rescale_log = 0.0;
    for _ in 0..(n - 1) {
        g = op.apply(&g);
        let sup = g.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        rescale_log += sup.ln();
        for x in g.iter_mut() {
            *x /= sup;
        }
    }
    Ok((op.weighted_inner(v_grid, &g).ln() + rescale_log, rescale_log))
}

/// log ⟨v, K^{N−1} v⟩ for N ≥ 2: N−1 operator applications, rescaled to
/// sup-norm 1 after each with the scalings accumulated in log space (the
/// raw iterates underflow within a few dozen applications).
pub fn inner_product_iterate(
    op: &RadialOperator,
    v_grid: &[f64],
    n: usize,
) -> Result<f64, KernelError> {
    iterate_inner(op, v_grid, n).map(|(log_inner, _)| log_inner)
}

/// Reconstructed log-moment with its exact decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionResult {
    /// Inverse temperature.
    pub beta: f64,
    /// Box side N.
    pub n: usize,
    /// log of the closed-form prefactor.
    pub log_prefactor: f64,
    /// log ⟨v, K^{N−1} v⟩.
    pub log_inner: f64,
    /// log E = `log_prefactor` + `log_inner`, exactly (stored, not
    /// re-derived).
    pub log_e: f64,
    /// Sum of the per-application log rescalings inside `log_inner`.
    pub rescale_log_accumulator: f64,
}

impl ExpansionResult {
    /// Per-site value log E / N.
    pub fn per_site(&self) -> f64 {
        self.log_e / self.n as f64
    }
}

fn log_prefactor(beta: f64, n: usize) -> f64 {
    let rho = (-beta).exp();
    let one_minus_rho = -(-beta).exp_m1();
    let nf = n as f64;
    let log_ratio = (1.0 + rho).ln() - one_minus_rho.ln();
    nf * std::f64::consts::LN_2 + (1.0 - std::f64::consts::PI.ln()) + (-beta + log_ratio)
        + nf * (beta + log_ratio - 1.0)
}

/// log E for a 1-d box of side N at inverse temperature β, through the
/// operator expansion on the default grid for this β.
pub fn kernel_log_e(beta: f64, n: usize) -> Result<ExpansionResult, KernelError> {
    kernel_log_e_with_grid(beta, n, DEFAULT_RADIUS, default_node_count(beta))
}

/// log E on an explicit grid (radius R, M nodes).
pub fn kernel_log_e_with_grid(
    beta: f64,
    n: usize,
    radius: f64,
    nodes: usize,
) -> Result<ExpansionResult, KernelError> {
    if n < 2 {
        return Err(KernelError::BadSide(n));
    }
    let op = build_radial_operator(beta, radius, nodes)?;
    let v = op.v_grid();
    let (log_inner, rescale_log_accumulator) = iterate_inner(&op, &v, n)?;
    let log_prefactor = log_prefactor(beta, n);
    Ok(ExpansionResult {
        beta,
        n,
        log_prefactor,
        log_inner,
        log_e: log_prefactor + log_inner,
        rescale_log_accumulator,
    })
}

/// Squared Hilbert–Schmidt norm of the operator (as an operator on the
/// plane, all angular sectors included), by direct double quadrature:
///
/// ```text
///     ‖K‖²_HS = (1/(4t²)) ∫∫ f(r)²f(r′)² e^{−(r²+r′²)/(2t)} I₀(rr′/t)
///               · r·r′ dr dr′.
/// ```
pub fn hs_norm_sq(op: &RadialOperator) -> f64 {
    let t = op.t();
    let m = op.n_nodes();
    let parts: Vec<KahanSum> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ri = op.nodes[i];
            let fi2 = op.f_values[i] * op.f_values[i];
            let mut acc = KahanSum::new();
            for j in 0..m {
                let rj = op.nodes[j];
                let diff = ri - rj;
                let entry = fi2
                    * op.f_values[j]
                    * op.f_values[j]
                    * (-diff * diff / (2.0 * t)).exp()
                    * scaled_bessel_i0(ri * rj / t)
                    * ri
                    * rj
                    * op.quad_weights[i]
                    * op.quad_weights[j];
                acc.add(entry);
            }
            acc
        })
        .collect();
    let mut total = KahanSum::new();
    for p in &parts {
        total.merge(p);
    }
    total.value() / (4.0 * t * t)
}

/// Exact squared Hilbert–Schmidt norm of the continuum operator.
///
/// The semigroup identity ‖f e^{tΔ} f‖²_HS = (1/(8πt))·⟨f², e^{(t/2)Δ} f²⟩
/// reduces the norm to one heat application on the Gaussian profile
/// f(r)² = r²e^{1−r²}, which integrates in closed form:
/// with τ = t/2, u = 1+4τ, b = 1+1/u,
///
/// ```text
///     ⟨f², e^{τΔ} f²⟩ = 2πe²·[ 2τ/(u²b²) + 1/(u³b³) ].
/// ```
pub fn hs_norm_sq_reference(beta: f64) -> Result<f64, KernelError> {
    let t = weight_functions(beta)?.t();
    let tau = 0.5 * t;
    let u = 1.0 + 4.0 * tau;
    let b = 1.0 + 1.0 / u;
    let inner = 2.0
        * std::f64::consts::PI
        * std::f64::consts::E
        * std::f64::consts::E
        * (2.0 * tau / (u * u * b * b) + 1.0 / (u * u * u * b * b * b));
    Ok(inner / (8.0 * std::f64::consts::PI * t))
}

/// Closed form of the Gaussian moment I_k = ⟨v, f^{2(N+k)−2} v⟩ in log
/// space: log I_k = log π + (N−1) + log (N+k)! − (N+k+1)·log b with
/// b = γ + N − 1, valid for −N ≤ k ≤ N.
pub fn ik_closed_form(n: usize, beta: f64, k: i64) -> Result<f64, KernelError> {
    let weights = weight_functions(beta)?;
    if k < -(n as i64) || k > n as i64 {
        return Err(KernelError::BadOrder { k, n });
    }
    let nk = (n as i64 + k) as usize;
    let b = weights.gamma() + n as f64 - 1.0;
    Ok(std::f64::consts::PI.ln() + (n as f64 - 1.0) + ln_factorial(nk)
        - (nk as f64 + 1.0) * b.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeBox;
    use crate::matrix::KmsMatrix;
    use crate::numeric::log_sum_exp;
    use crate::permanent::permanent_exact;

    #[test]
    fn weights_peak_and_time_values() {
        let w = weight_functions(0.1).unwrap();
        assert_eq!(w.f(1.0), 1.0);
        assert_eq!(w.f(-1.0), 1.0);
        assert!((w.t() - 2.5020e-3).abs() <= 1e-6, "t(0.1) = {}", w.t());
        for beta in [1e-2, 1e-3] {
            let ratio = semigroup_time(beta) / (beta * beta / 4.0);
            assert!((ratio - 1.0).abs() <= 2.0 * beta, "t ratio at {beta}: {ratio}");
        }
        assert!(matches!(weight_functions(0.0), Err(KernelError::BadBeta(_))));
        assert!(matches!(
            weight_functions(-0.5),
            Err(KernelError::BadBeta(_))
        ));
    }

    #[test]
    fn scaled_bessel_matches_angular_quadrature() {
        // Î₀(z) = (1/2π)∫ e^{−z(1−cos θ)} dθ; the periodic trapezoid rule
        // is spectrally accurate, giving an independent oracle for both
        // the series and asymptotic branches.
        let m = 4096;
        for z in [1e-3, 0.5, 3.0, 19.9, 20.1, 100.0, 500.0] {
            let mut acc = KahanSum::new();
            for k in 0..m {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                acc.add((-z * (1.0 - theta.cos())).exp());
            }
            let oracle = acc.value() / m as f64;
            let ours = scaled_bessel_i0(z);
            assert!(
                (ours - oracle).abs() <= 1e-10 * oracle,
                "z = {z}: {ours} vs {oracle}"
            );
        }
        assert_eq!(scaled_bessel_i0(0.0), 1.0);
        let known = 1.2660658777520084f64 * (-1.0f64).exp();
        assert!((scaled_bessel_i0(1.0) - known).abs() <= 1e-14);
    }

    #[test]
    fn heat_kernel_preserves_mass_at_interior_nodes() {
        let op = build_radial_operator(0.5, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
        let (rs, ws) = op.grid();
        let t = op.t();
        for (i, &r) in rs.iter().enumerate() {
            if !(0.5..=6.0).contains(&r) || i % 37 != 0 {
                continue;
            }
            let mut mass = KahanSum::new();
            for (j, &rp) in rs.iter().enumerate() {
                mass.add(heat_kernel_value(t, r, rp) * rp * ws[j]);
            }
            assert!(
                (mass.value() - 1.0).abs() <= 1e-6,
                "mass at r = {r}: {}",
                mass.value()
            );
        }
    }

    #[test]
    fn operator_entries_finite_and_nonnegative() {
        let op = build_radial_operator(0.5, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
        assert!(op.kernel.iter().all(|&k| k.is_finite() && k >= 0.0));
        assert!(matches!(
            build_radial_operator(0.5, 5.0, DEFAULT_NODES),
            Err(KernelError::BadGrid { .. })
        ));
        assert!(matches!(
            build_radial_operator(0.5, 8.0, 100),
            Err(KernelError::BadGrid { .. })
        ));
    }

    #[test]
    fn first_inner_product_matches_plane_tensor_quadrature() {
        // Independent oracle for the Bessel reduction: ⟨v, Kv⟩ computed
        // with the angular identity against a rotation-fixed 3-d tensor
        // quadrature of the raw plane heat kernel (no Bessel functions).
        let beta = 0.5;
        let op = build_radial_operator(beta, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
        let v = op.v_grid();
        let kv = op.apply(&v);
        let ours = op.weighted_inner(&v, &kv);

        let w = op.radial_weights();
        let t = op.t();
        let (rs, rws) = map_gauss_legendre(64, 0.0, DEFAULT_RADIUS);
        let (ys, yws) = map_gauss_legendre(160, -DEFAULT_RADIUS, DEFAULT_RADIUS);
        let oracle: f64 = rs
            .iter()
            .zip(&rws)
            .map(|(&r, &rw)| {
                let mut inner = KahanSum::new();
                for (&y1, &w1) in ys.iter().zip(&yws) {
                    for (&y2, &w2) in ys.iter().zip(&yws) {
                        let s = (y1 * y1 + y2 * y2).sqrt();
                        let d2 = (r - y1) * (r - y1) + y2 * y2;
                        inner.add(
                            w1 * w2 * (-d2 / (4.0 * t)).exp() * w.f(s) * w.v(s),
                        );
                    }
                }
                let heat = inner.value() / (4.0 * std::f64::consts::PI * t);
                2.0 * std::f64::consts::PI * r * rw * w.v(r) * w.f(r) * heat
            })
            .sum();
        assert!(
            (ours - oracle).abs() <= 1e-5 * oracle.abs(),
            "{ours} vs {oracle}"
        );

        // The iterate at N = 2 is the same number through the public path.
        let log_via_iterate = inner_product_iterate(&op, &v, 2).unwrap();
        assert!((log_via_iterate - ours.ln()).abs() <= 1e-12);
    }

    #[test]
    fn hs_norm_matches_exact_closed_form() {
        for beta in [0.5, 1.0] {
            let op = build_radial_operator(beta, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
            let quad = hs_norm_sq(&op);
            let exact = hs_norm_sq_reference(beta).unwrap();
            assert!(
                (quad - exact).abs() <= 1e-6 * exact,
                "beta = {beta}: {quad} vs {exact}"
            );
        }
    }

    #[test]
    fn principal_eigenvalue_in_unit_interval_with_linear_gap() {
        let mut gaps = Vec::new();
        for beta in [0.02, 0.05, 0.1] {
            let op =
                build_radial_operator(beta, DEFAULT_RADIUS, default_node_count(beta)).unwrap();
            let l1 = principal_eigenvalue(&op).unwrap();
            assert!(0.0 < l1 && l1 < 1.0, "lambda1({beta}) = {l1}");
            gaps.push((1.0 - l1) / beta);
        }
        let (lo, hi) = (
            gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            gaps.iter().cloned().fold(0.0f64, f64::max),
        );
        assert!(hi <= 2.0 * lo, "gap slopes {gaps:?} spread beyond factor 2");
    }

    #[test]
    fn second_eigenvalue_strictly_below_first() {
        let op = build_radial_operator(0.5, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
        let (l1, l2) = leading_eigenvalues(&op).unwrap();
        assert!(0.0 < l1 && l1 < 1.0);
        assert!(l2 < l1, "l2 = {l2} not below l1 = {l1}");
    }

    #[test]
    fn iterated_inner_product_decreases_and_approaches_spectral_slope() {
        let op = build_radial_operator(0.5, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
        let v = op.v_grid();
        let values: Vec<f64> = (2..=8)
            .map(|n| inner_product_iterate(&op, &v, n).unwrap())
            .collect();
        for pair in values.windows(2) {
            assert!(pair[1] < pair[0], "inner product not decreasing: {values:?}");
        }
        let l1 = principal_eigenvalue(&op).unwrap();
        let at_399 = inner_product_iterate(&op, &v, 399).unwrap();
        let at_400 = inner_product_iterate(&op, &v, 400).unwrap();
        assert!(
            ((at_400 - at_399) - l1.ln()).abs() <= 1e-4,
            "slope {} vs log lambda1 {}",
            at_400 - at_399,
            l1.ln()
        );
    }

    #[test]
    fn inner_product_validates_inputs() {
        let op = build_radial_operator(0.5, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
        let v = op.v_grid();
        assert!(matches!(
            inner_product_iterate(&op, &v, 1),
            Err(KernelError::BadSide(1))
        ));
        assert!(matches!(
            inner_product_iterate(&op, &v[1..], 3),
            Err(KernelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn quadrature_converged_at_default_grid() {
        let coarse = kernel_log_e_with_grid(0.5, 8, DEFAULT_RADIUS, DEFAULT_NODES).unwrap();
        let fine = kernel_log_e_with_grid(0.5, 8, DEFAULT_RADIUS + 2.0, 2 * DEFAULT_NODES).unwrap();
        assert!(
            (coarse.log_inner - fine.log_inner).abs() <= 1e-6,
            "{} vs {}",
            coarse.log_inner,
            fine.log_inner
        );
    }

    #[test]
    fn log_moment_matches_exact_permanent() {
        let beta = 0.5;
        let result = kernel_log_e(beta, 8).unwrap();
        let b = LatticeBox::new(1, 8).unwrap();
        let log_perm = permanent_exact(KmsMatrix::build(&b, beta).unwrap().matrix())
            .unwrap()
            .ln();
        let exact = 8.0 * std::f64::consts::LN_2 + log_perm;
        assert!(
            (result.log_e - exact).abs() <= 1e-3 * exact.abs(),
            "log E {} vs exact {exact}",
            result.log_e
        );
        assert_eq!(result.log_e, result.log_prefactor + result.log_inner);
        assert!(result.rescale_log_accumulator.is_finite());
    }

    #[test]
    fn two_site_moment_closed_form() {
        let beta = 0.8_f64;
        let rho = (-beta).exp();
        let exact = (4.0 * (1.0 + rho * rho)).ln();
        let result = kernel_log_e(beta, 2).unwrap();
        assert!(
            (result.log_e - exact).abs() <= 1e-5 * exact.abs(),
            "{} vs {exact}",
            result.log_e
        );
        assert!(matches!(kernel_log_e(beta, 1), Err(KernelError::BadSide(1))));
    }

    #[test]
    fn supercritical_per_site_envelope() {
        // Deep in the supercritical regime the per-site value approaches
        // log(4/β) − 1 with an O(β) + O(1/(βN)) correction, so the line is
        // only reached for small β at large βN. At fixed βN ≈ 21 the
        // measured gap is 0.33 at β = 0.8, 0.11 at β = 0.4, and 0.02 at
        // β = 0.2; the assertion pins the regime where the envelope holds.
        let result = kernel_log_e(0.2, 104).unwrap();
        let line = (4.0f64 / 0.2).ln() - 1.0;
        assert!(
            (result.per_site() - line).abs() <= 0.15,
            "per-site {} vs line {line}",
            result.per_site()
        );
    }

    #[test]
    fn moment_closed_form_and_ratio_identity() {
        // N = 2, β = 1, k = 0 evaluates to ≈ 0.539.
        let log_i0 = ik_closed_form(2, 1.0, 0).unwrap();
        assert!(
            (log_i0.exp() - 0.539).abs() <= 1e-3,
            "I_0 = {}",
            log_i0.exp()
        );
        for n in [2usize, 3, 5] {
            let beta = 0.7;
            let gamma = weight_functions(beta).unwrap().gamma();
            let b = gamma + n as f64 - 1.0;
            let base = ik_closed_form(n, beta, 0).unwrap();
            for k in -(n as i64)..=(n as i64) {
                let lhs = ik_closed_form(n, beta, k).unwrap() - base;
                let rhs = ln_factorial((n as i64 + k) as usize) - ln_factorial(n)
                    - k as f64 * b.ln();
                assert!((lhs - rhs).abs() <= 1e-12, "n {n} k {k}: {lhs} vs {rhs}");
            }
        }
        assert!(matches!(
            ik_closed_form(3, 0.5, 4),
            Err(KernelError::BadOrder { .. })
        ));
        assert!(matches!(
            ik_closed_form(3, 0.5, -4),
            Err(KernelError::BadOrder { .. })
        ));
    }

    #[test]
    fn moment_closed_form_matches_quadrature() {
        // I_0 = ⟨v, f^{2N−2} v⟩ by direct radial quadrature.
        for n in [2usize, 3, 4] {
            for beta in [0.5, 1.0] {
                let w = weight_functions(beta).unwrap();
                let (rs, ws) = map_gauss_legendre(2048, 0.0, DEFAULT_RADIUS);
                let logs: Vec<f64> = rs
                    .iter()
                    .zip(&ws)
                    .map(|(&r, &wq)| {
                        let vv = w.v(r);
                        (2.0 * std::f64::consts::PI * r * wq).ln()
                            + 2.0 * vv.ln()
                            + (2.0 * n as f64 - 2.0) * w.f(r).ln()
                    })
                    .collect();
                let quad = log_sum_exp(&logs);
                let exact = ik_closed_form(n, beta, 0).unwrap();
                assert!(
                    (quad - exact).abs() <= 1e-6,
                    "n {n} beta {beta}: {quad} vs {exact}"
                );
            }
        }
    }
}
