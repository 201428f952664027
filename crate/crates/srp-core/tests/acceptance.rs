//! The ten acceptance gates for this laboratory, in fixed order. Each test
//! prints one `ACCEPTANCE <id>: PASS/FAIL — <measured>` line with the
//! quantities it measured; multi-part gates carry letter suffixes. A FAIL
//! here is a real unmet tolerance with its measured gap on display — the
//! tolerances are pinned, never widened to fit.

use srp_core::gaussian::estimate_moment;
use srp_core::kernel::{
    build_radial_operator, default_node_count, hs_norm_sq, hs_norm_sq_reference, kernel_log_e,
    principal_eigenvalue, semigroup_time, DEFAULT_RADIUS,
};
use srp_core::lattice::{LatticeBox, ModelParams};
use srp_core::mcmc::{
    default_burn_in, exact_distribution, run_chains, total_variation, ChainState,
};
use srp_core::numeric::{ln_factorial, KahanSum};
use srp_core::ode::{f_of_c, g1, implicit_parameters, solve_bvp};
use srp_core::permanent::{log_partition, mean_displacement_interval};

use std::collections::HashMap;
use std::time::Instant;

/// Print the verdict line and enforce it.
fn gate(id: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {id}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{id} failed: {detail}");
}

/// Visit the energy H(π) of every permutation of the box, by Heap's
/// algorithm with a full recompute per leaf — deliberately sharing nothing
/// with the permanent routines it cross-checks.
fn for_each_energy(lattice: &LatticeBox, mut visit: impl FnMut(f64)) {
    let n = lattice.n_sites();
    let energy = |m: &[usize]| -> f64 {
        m.iter().enumerate().map(|(i, &mi)| lattice.distance(i, mi)).sum()
    };
    let mut mapping: Vec<usize> = (0..n).collect();
    visit(energy(&mapping));
    let mut stack = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                mapping.swap(0, i);
            } else {
                mapping.swap(stack[i], i);
            }
            visit(energy(&mapping));
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn a01_partition_sum_equals_exact_permanent() {
    let started = Instant::now();
    let betas = [0.0, 0.3, 1.0];
    let mut worst_rel: f64 = 0.0;

    let mut boxes: Vec<LatticeBox> = (1..=8).map(|n| LatticeBox::new(1, n).unwrap()).collect();
    boxes.push(LatticeBox::new(2, 2).unwrap());

    for lattice in &boxes {
        // One enumeration pass feeds all three temperatures.
        let mut sums = [KahanSum::new(), KahanSum::new(), KahanSum::new()];
        for_each_energy(lattice, |h| {
            for (k, &beta) in betas.iter().enumerate() {
                sums[k].add((-beta * h).exp());
            }
        });
        for (k, &beta) in betas.iter().enumerate() {
            let brute = sums[k].value();
            let exact = log_partition(lattice, beta).unwrap().value();
            worst_rel = worst_rel.max((brute - exact).abs() / exact);
        }
    }

    let elapsed = started.elapsed();
    let pass = worst_rel <= 1e-12 && elapsed.as_secs_f64() < 10.0;
    gate(
        "01 partition-sum vs permanent",
        pass,
        &format!("worst rel diff {worst_rel:.3e} over 9 boxes x 3 betas (tol 1e-12), {elapsed:?}"),
    );
}

#[test]
fn a02_uniform_displacement_constant() {
    let started = Instant::now();

    // Enumerated uniform mean displacement per site vs N/3 − 1/(3N).
    let mut worst_dev: f64 = 0.0;
    for n in 1..=8usize {
        let lattice = LatticeBox::new(1, n).unwrap();
        let mut total = KahanSum::new();
        let mut count = 0u64;
        for_each_energy(&lattice, |h| {
            total.add(h);
            count += 1;
        });
        let enumerated = total.value() / count as f64 / n as f64;
        let line = n as f64 / 3.0 - 1.0 / (3.0 * n as f64);
        worst_dev = worst_dev.max((enumerated - line).abs());
    }

    // The sampler reproduces the N=8 value within its own error bar.
    let params = ModelParams::new(LatticeBox::new(1, 8).unwrap(), 0.0).unwrap();
    let stats = run_chains(&params, default_burn_in(&params), 200_000, 11, 2024, 2).unwrap();
    let truth = 8.0 / 3.0 - 1.0 / 24.0;
    let z = (stats.displacement_mean - truth) / stats.displacement_se;

    let elapsed = started.elapsed();
    let pass = worst_dev <= 1e-12 && z.abs() <= 3.0 && elapsed.as_secs_f64() < 30.0;
    gate(
        "02 uniform displacement",
        pass,
        &format!(
            "worst enumerated dev {worst_dev:.3e} (tol 1e-12); sampler D {:.6} vs {truth:.6}, z {z:.2} (|z| <= 3); {elapsed:?}",
            stats.displacement_mean
        ),
    );
}

#[test]
fn a03a_moment_estimator_brackets_exact_permanent() {
    let started = Instant::now();
    let mut detail = String::new();
    let mut pass = true;
    for (i, &(n, beta)) in [(4usize, 0.5f64), (4, 1.0), (8, 0.5), (8, 1.0)].iter().enumerate() {
        let lattice = LatticeBox::new(1, n).unwrap();
        let exact = log_partition(&lattice, beta).unwrap().ln();
        let est = estimate_moment(&lattice, beta, 10_000_000, 301 + i as u64).unwrap();
        let z = (est.log_permanent(n) - exact) / est.se_of_log;
        pass &= z.abs() <= 3.0;
        detail.push_str(&format!("N={n} beta={beta}: z={z:.2}; "));
    }
    gate(
        "03a moment estimator",
        pass,
        &format!("{detail}1e7 samples each (|z| <= 3), {:?}", started.elapsed()),
    );
}

#[test]
fn a03b_moment_estimator_seed_study() {
    let started = Instant::now();
    let lattice = LatticeBox::new(1, 4).unwrap();
    let beta = 0.5;
    let exact = log_partition(&lattice, beta).unwrap().ln();
    let mut inside = 0u32;
    let mut worst: f64 = 0.0;
    for seed in 1..=50u64 {
        let est = estimate_moment(&lattice, beta, 10_000_000, seed).unwrap();
        let z = (est.log_permanent(4) - exact).abs() / est.se_of_log;
        if z <= 3.0 {
            inside += 1;
        }
        worst = worst.max(z);
    }
    gate(
        "03b estimator seed study",
        inside >= 45,
        &format!(
            "{inside}/50 seeds inside 3 SE at N=4 beta=0.5 (need >= 45), worst |z| {worst:.2}, {:?}",
            started.elapsed()
        ),
    );
}

#[test]
fn a04_subcritical_expansion_line() {
    let started = Instant::now();
    let n = 20usize;
    let beta = 1e-4;
    let lattice = LatticeBox::new(1, n).unwrap();
    let per_site = log_partition(&lattice, beta).unwrap().ln() / n as f64;
    let uniform = ln_factorial(n) / n as f64;
    let correction = beta * (n as f64 / 3.0 - 1.0 / (3.0 * n as f64));
    let gap = (per_site - uniform + correction).abs();
    let tol = 5.0 * beta * beta * (n * n) as f64;
    gate(
        "04 subcritical line",
        gap <= tol,
        &format!("N={n} beta={beta}: residual {gap:.3e} (tol {tol:.1e}), {:?}", started.elapsed()),
    );
}

#[test]
fn a05_critical_rate_line() {
    let started = Instant::now();
    let n = 24usize;
    let uniform = ln_factorial(n) / n as f64;
    let mut detail = String::new();
    let mut pass = true;
    for &c in &[0.5f64, 1.0, 2.0] {
        let beta = c / n as f64;
        let lattice = LatticeBox::new(1, n).unwrap();
        let per_site = log_partition(&lattice, beta).unwrap().ln() / n as f64;
        let rate = g1(c, 1e-9).unwrap().value;
        let gap = (per_site - uniform - rate).abs();
        pass &= gap <= 0.15;
        detail.push_str(&format!("c={c}: gap {gap:.4}; "));
    }
    gate(
        "05 critical line",
        pass,
        &format!("N={n}, {detail}tol 0.15 each, {:?}", started.elapsed()),
    );
}

#[test]
fn a06_supercritical_envelope_line() {
    let started = Instant::now();
    let n = 26usize;
    let beta = 0.8;
    let lattice = LatticeBox::new(1, n).unwrap();
    let per_site = log_partition(&lattice, beta).unwrap().ln() / n as f64;
    let envelope = (2.0 / beta).ln() - 1.0;
    let gap = (per_site - envelope).abs();
    gate(
        "06 supercritical line",
        gap <= 0.15,
        &format!(
            "N={n} beta={beta}: per-site {per_site:.4} vs envelope {envelope:.4}, gap {gap:.4} (tol 0.15), {:?}",
            started.elapsed()
        ),
    );
}

#[test]
fn a07_rate_function_shape_and_cross_routes() {
    let started = Instant::now();

    let g_small = g1(0.01, 1e-9).unwrap().value;
    let g_dev = (g_small + 1.0 / 300.0).abs();
    let f_small = f_of_c(0.01, None, 1e-9).unwrap().value;
    let f_dev = (f_small - 1.0 / 3.0).abs();

    // Shape on a uniform 41-point grid over [0.1, 20].
    let step = (20.0 - 0.1) / 40.0;
    let grid: Vec<f64> = (0..=40).map(|k| 0.1 + k as f64 * step).collect();
    let values: Vec<f64> = grid.iter().map(|&c| g1(c, 1e-9).unwrap().value).collect();
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let min_second_diff = values
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::INFINITY, f64::min);

    // Shooting vs the implicit system, far beyond their shared tolerance.
    let mut worst_route_gap: f64 = 0.0;
    for &c in &[0.1f64, 1.0, 10.0] {
        let shot = solve_bvp(c, 1e-9).unwrap();
        let (a1, _) = implicit_parameters(c, 1e-9).unwrap();
        worst_route_gap = worst_route_gap.max((shot.a - a1).abs());
    }

    let pass = g_dev <= 1e-4
        && f_dev <= 0.02
        && decreasing
        && min_second_diff >= -1e-7
        && worst_route_gap <= 1e-8;
    gate(
        "07 rate function",
        pass,
        &format!(
            "g1(0.01)+1/300 = {g_dev:.2e} (tol 1e-4); f(0.01)-1/3 = {f_dev:.2e} (tol 0.02); decreasing {decreasing}; min 2nd diff {min_second_diff:.2e} (>= -1e-7); route gap {worst_route_gap:.2e} (tol 1e-8); {:?}",
            started.elapsed()
        ),
    );
}

#[test]
fn a08a_operator_expansion_matches_permanent() {
    let started = Instant::now();
    let n = 8usize;
    let beta = 0.5;
    let expansion = kernel_log_e(beta, n).unwrap();
    let truth = n as f64 * std::f64::consts::LN_2
        + log_partition(&LatticeBox::new(1, n).unwrap(), beta).unwrap().ln();
    let rel = (expansion.log_e - truth).abs() / truth.abs();
    gate(
        "08a operator expansion",
        rel <= 1e-3,
        &format!(
            "N={n} beta={beta}: log moment {:.12} vs exact {truth:.12}, rel {rel:.2e} (tol 1e-3), {:?}",
            expansion.log_e,
            started.elapsed()
        ),
    );
}

#[test]
fn a08b_operator_norm_against_stated_reference() {
    let started = Instant::now();
    let beta = 0.5;
    let op = build_radial_operator(beta, DEFAULT_RADIUS, default_node_count(beta)).unwrap();
    let measured = hs_norm_sq(&op);
    let t = semigroup_time(beta);
    let stated = std::f64::consts::PI * std::f64::consts::E.powi(2) / (8.0 * t);
    let independent = hs_norm_sq_reference(beta).unwrap();
    let rel_stated = (measured - stated).abs() / stated;
    let rel_independent = (measured - independent).abs() / independent;
    gate(
        "08b operator norm check",
        rel_stated <= 1e-3,
        &format!(
            "quadrature ||K||_HS^2 {measured:.5} vs stated reference pi*e^2/(8t) = {stated:.5}: rel {rel_stated:.3} (tol 1e-3); closed-form double integral gives {independent:.5}, rel {rel_independent:.1e} — the operator matches the integral, not the stated constant; {:?}",
            started.elapsed()
        ),
    );
}

#[test]
fn a08c_contraction_calibration() {
    let started = Instant::now();
    let mut ratios = Vec::new();
    let mut in_range = true;
    let mut detail = String::new();
    for &beta in &[0.02f64, 0.05, 0.1] {
        let op = build_radial_operator(beta, DEFAULT_RADIUS, default_node_count(beta)).unwrap();
        let lambda1 = principal_eigenvalue(&op).unwrap();
        in_range &= lambda1 > 0.0 && lambda1 < 1.0;
        let ratio = (1.0 - lambda1) / beta;
        detail.push_str(&format!("beta={beta}: lambda1={lambda1:.6}, (1-lambda1)/beta={ratio:.4}; "));
        ratios.push(ratio);
    }
    let spread = ratios.iter().cloned().fold(f64::MIN, f64::max)
        / ratios.iter().cloned().fold(f64::MAX, f64::min);
    gate(
        "08c contraction calibration",
        in_range && spread <= 2.0,
        &format!("{detail}spread {spread:.3} (<= 2), {:?}", started.elapsed()),
    );
}

/// Occupancy counts of the visited permutations, with odd thinning so both
/// parity classes enter the record at β = 0 (the all-accept walk alternates
/// parity every step).
fn visit_counts(
    params: &ModelParams,
    steps: u64,
    thinning: u64,
    seed: u64,
) -> HashMap<Vec<usize>, u64> {
    assert_eq!(thinning % 2, 1);
    let mut chain = ChainState::new(params.clone(), seed);
    for _ in 0..default_burn_in(params) {
        chain.step();
    }
    let mut counts = HashMap::new();
    for _ in 0..(steps / thinning) {
        for _ in 0..thinning {
            chain.step();
        }
        *counts.entry(chain.perm().mapping().to_vec()).or_insert(0u64) += 1;
    }
    counts
}

#[test]
fn a09a_chain_total_variation() {
    let started = Instant::now();
    let mut detail = String::new();
    let mut pass = true;
    for &beta in &[0.0f64, 0.3, 1.0] {
        let params = ModelParams::new(LatticeBox::new(1, 5).unwrap(), beta).unwrap();
        let law = exact_distribution(&params).unwrap();
        let counts = visit_counts(&params, 1_000_000, 11, 42);
        let tv = total_variation(&counts, &law);
        pass &= tv <= 0.02;
        detail.push_str(&format!("beta={beta}: TV {tv:.4}; "));
    }
    gate(
        "09a chain total variation",
        pass,
        &format!("N=5, 1e6 steps each, {detail}tol 0.02, {:?}", started.elapsed()),
    );
}

#[test]
fn a09b_chain_inside_convexity_enclosure() {
    let started = Instant::now();
    let lattice = LatticeBox::new(1, 6).unwrap();
    let beta = 0.5;
    // δ = 0.02 keeps the enclosure (width ~4e−2) a meaningful gate well
    // above the sampler's error bar (~7e−4).
    let interval = mean_displacement_interval(&lattice, beta, Some(0.02)).unwrap();
    let params = ModelParams::new(lattice, beta).unwrap();
    let stats = run_chains(&params, default_burn_in(&params), 500_000, 6, 7, 4).unwrap();
    gate(
        "09b chain inside enclosure",
        interval.contains(stats.displacement_mean),
        &format!(
            "D {:.6} (se {:.1e}) vs [{:.6}, {:.6}], {:?}",
            stats.displacement_mean,
            stats.displacement_se,
            interval.lower,
            interval.upper,
            started.elapsed()
        ),
    );
}

#[test]
fn a10_band_structure_crossover() {
    let started = Instant::now();
    let side = 5usize;
    let mut upper = Vec::new(); // β·D for β ≥ 0.5
    let mut lower = Vec::new(); // D/N for β ≤ 0.1
    let mut detail = String::new();
    for &beta in &[0.02f64, 0.1, 0.5, 2.0] {
        let params = ModelParams::new(LatticeBox::new(2, side).unwrap(), beta).unwrap();
        // Long warm-up: at β = 2 the acceptance rate is ~1%, and the chain
        // starts from the identity.
        let stats = run_chains(&params, 500_000, 200_000, 11, 555, 2).unwrap();
        let d = stats.displacement_mean;
        detail.push_str(&format!("beta={beta}: D={d:.4}; "));
        if beta >= 0.5 {
            upper.push(beta * d);
        }
        if beta <= 0.1 {
            lower.push(d / side as f64);
        }
    }
    let spread = |v: &[f64]| {
        v.iter().cloned().fold(f64::MIN, f64::max) / v.iter().cloned().fold(f64::MAX, f64::min)
    };
    let (upper_spread, lower_spread) = (spread(&upper), spread(&lower));
    gate(
        "10 band crossover",
        upper_spread <= 4.0 && lower_spread <= 4.0,
        &format!(
            "d=2 N={side}: {detail}beta*D spread {upper_spread:.3} (<= 4), D/N spread {lower_spread:.3} (<= 4), {:?}",
            started.elapsed()
        ),
    );
}
