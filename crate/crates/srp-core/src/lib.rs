//! Numerical laboratory for Boltzmann-weighted spatial random permutations.
//!
//! The model: permutations π of the sites of a d-dimensional box
//! ([1..N]^d, d ≤ 3) weighted by `exp(−β·H(π))` with the displacement energy
//! `H(π) = Σ_x |x − π(x)|` (Euclidean). Its partition function is the
//! permanent of the positive kernel matrix `A_{x,y} = e^{−β|x−y|}`, and the
//! observable of interest is the mean displacement per site
//! `D = −∂_β (1/N^d) log Z`.
//!
//! Five complementary computational routes live here, each able to
//! cross-check the others on overlapping domains:
//!
//! * [`permanent`] — exact permanents (Gray-code sign-vector enumeration,
//!   compensated and parallel), rigorous displacement enclosures from
//!   convexity, and closed-form asymptotic predictions per coupling regime;
//! * [`mcmc`] — Metropolis sampling over transpositions with batch-means
//!   errors, histograms, cycle statistics, and an exact-enumeration oracle
//!   at tiny sizes;
//! * [`gaussian`] — a Gaussian-moment Monte Carlo identity that estimates
//!   the same permanent from products of squared Gaussians;
//! * [`ode`] — the one-dimensional rate curve g¹(c) through a certified
//!   boundary-value solve, plus the displacement rate f = −dg¹/dc;
//! * [`kernel`] — a heat-kernel operator expansion that reaches the same
//!   partition function through quadrature and spectral iteration.
//!
//! [`lattice`], [`matrix`], and [`numeric`] carry the shared plumbing:
//! boxes, permutations and energies; the kernel matrix; log-scale values,
//! compensated sums, quadrature and root-finding.

// Guards written as `!(x > 0.0)` are deliberate: unlike `x <= 0.0`, the
// negated form is also true for NaN, and rejecting NaN is the point of
// every such check in this crate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gaussian;
pub mod kernel;
pub mod lattice;
pub mod matrix;
pub mod mcmc;
pub mod numeric;
pub mod ode;
pub mod permanent;
