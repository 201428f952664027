//! The single-route verbs: perm, sample, gaussian, ode, kernel, curves.

use std::path::PathBuf;

use srp_core::gaussian::estimate_moment;
use srp_core::kernel::{
    build_radial_operator, default_node_count, hs_norm_sq, hs_norm_sq_reference,
    principal_eigenvalue, DEFAULT_RADIUS,
};
use srp_core::lattice::{LatticeBox, ModelParams};
use srp_core::mcmc::{default_burn_in, estimate_longest_cycle, run_chains};
use srp_core::ode::rate_function_point;
use srp_core::permanent::{
    default_fd_step, mean_displacement_interval, permanent_bruteforce, permanent_exact,
    row_sum_upper_bound, uniform_mean_displacement_d1,
};
use srp_core::matrix::KmsMatrix;

use crate::args::{CurvesArgs, GaussianArgs, KernelArgs, OdeArgs, PermArgs, SampleArgs};
use crate::error::CliError;
use crate::output::{cell, histogram_sibling, CsvDoc};

/// What one verb run hands back to `main` for writing and the manifest.
pub struct VerbOutcome {
    pub doc: CsvDoc,
    /// Side documents: (path, doc) pairs written in addition to the main CSV.
    pub side_docs: Vec<(PathBuf, CsvDoc)>,
    /// Canonical argument tail (verb-specific flags, defaults materialized).
    pub argv: Vec<String>,
    /// Raised feasibility/agreement flags.
    pub flags: Vec<String>,
    /// Per-row provenance: which route produced each row.
    pub row_routes: Vec<String>,
}

impl VerbOutcome {
    pub(crate) fn new(doc: CsvDoc) -> Self {
        Self {
            doc,
            side_docs: Vec::new(),
            argv: Vec::new(),
            flags: Vec::new(),
            row_routes: Vec::new(),
        }
    }
}

/// Mean displacement of the uniform (β = 0) measure on any box: the average
/// Euclidean displacement of a uniformly random bijection, exactly
/// Σ_{x,y} |x − y| / n².
pub(crate) fn uniform_mean_displacement(lattice: &LatticeBox) -> f64 {
    let n = lattice.n_sites();
    let total: f64 = (0..n)
        .map(|i| (0..n).map(|j| lattice.distance(i, j)).sum::<f64>())
        .sum();
    total / (n * n) as f64
}

pub fn run_perm(args: &PermArgs) -> Result<VerbOutcome, CliError> {
    let lattice = LatticeBox::new(args.dim, args.side)?;
    let kms = KmsMatrix::build(&lattice, args.beta)?;
    let log_perm = if args.oracle {
        permanent_bruteforce(kms.matrix())?
    } else {
        permanent_exact(kms.matrix())?
    }
    .ln();
    let n_sites = lattice.n_sites() as f64;

    let (lower, upper) = if args.beta == 0.0 {
        // The enclosure degenerates at β = 0; the uniform measure has an
        // exact closed form instead.
        let exact = if args.dim == 1 {
            uniform_mean_displacement_d1(args.side)
        } else {
            uniform_mean_displacement(&lattice)
        };
        (exact, exact)
    } else {
        let interval = mean_displacement_interval(&lattice, args.beta, args.delta)?;
        (interval.lower, interval.upper)
    };

    let rowsum = row_sum_upper_bound(kms.matrix())?.ln();

    let mut doc = CsvDoc::new(
        "perm",
        &["d", "N", "beta", "log_perm", "per_site", "lower_D", "upper_D", "rowsum_bound"],
    );
    doc.push_row(vec![
        args.dim.to_string(),
        args.side.to_string(),
        cell(args.beta),
        cell(log_perm),
        cell(log_perm / n_sites),
        cell(lower),
        cell(upper),
        cell(rowsum),
    ]);

    let mut outcome = VerbOutcome::new(doc);
    outcome.row_routes = vec![if args.oracle {
        "perm=enumeration".into()
    } else {
        "perm=exact".into()
    }];
    outcome.argv = vec![
        "--dim".into(),
        args.dim.to_string(),
        "--side".into(),
        args.side.to_string(),
        "--beta".into(),
        cell(args.beta),
        "--delta".into(),
        cell(args.delta.unwrap_or_else(|| default_fd_step(args.beta))),
    ];
    if args.oracle {
        outcome.argv.push("--oracle".into());
    }
    Ok(outcome)
}

pub fn run_sample(args: &SampleArgs, seed: u64, out: Option<&PathBuf>) -> Result<VerbOutcome, CliError> {
    let params = ModelParams::new(LatticeBox::new(args.dim, args.side)?, args.beta)?;
    let burnin = args.burnin.unwrap_or_else(|| default_burn_in(&params));
    let stats = run_chains(&params, burnin, args.samples, args.thin, seed, args.chains)?;
    let cycles = estimate_longest_cycle(&stats)?;

    let mut doc = CsvDoc::new(
        "sample",
        &["d", "N", "beta", "D_mean", "D_se", "longest_cycle_mean", "acc_rate"],
    );
    doc.push_row(vec![
        args.dim.to_string(),
        args.side.to_string(),
        cell(args.beta),
        cell(stats.displacement_mean),
        cell(stats.displacement_se),
        cell(cycles.mean),
        cell(stats.acceptance_rate),
    ]);

    let mut outcome = VerbOutcome::new(doc);
    outcome.row_routes = vec![format!("mcmc=metropolis chains={}", args.chains)];

    let hist_path = args
        .histogram
        .clone()
        .or_else(|| out.map(|p| histogram_sibling(p)));
    if let Some(path) = hist_path {
        let mut hist = CsvDoc::new("sample-histogram", &["bin_lower", "bin_upper", "count"]);
        for (idx, &count) in stats.histogram.counts().iter().enumerate() {
            let (lo, hi) = stats.histogram.bin_range(idx);
            hist.push_row(vec![cell(lo), cell(hi), count.to_string()]);
        }
        outcome.side_docs.push((path, hist));
    }

    outcome.argv = vec![
        "--dim".into(),
        args.dim.to_string(),
        "--side".into(),
        args.side.to_string(),
        "--beta".into(),
        cell(args.beta),
        "--burnin".into(),
        burnin.to_string(),
        "--samples".into(),
        args.samples.to_string(),
        "--thin".into(),
        args.thin.to_string(),
        "--chains".into(),
        args.chains.to_string(),
    ];
    if let Some(p) = &args.histogram {
        outcome.argv.push("--histogram".into());
        outcome.argv.push(p.display().to_string());
    }
    Ok(outcome)
}

pub fn run_gaussian(args: &GaussianArgs, seed: u64) -> Result<VerbOutcome, CliError> {
    let lattice = LatticeBox::new(args.dim, args.side)?;
    let est = estimate_moment(&lattice, args.beta, args.samples, seed)?;
    let n_sites = lattice.n_sites();

    let mut doc = CsvDoc::new(
        "gaussian",
        &["d", "N", "beta", "log_E_estimate", "se", "log_perm_implied", "ess"],
    );
    doc.push_row(vec![
        args.dim.to_string(),
        args.side.to_string(),
        cell(args.beta),
        cell(est.log_mean),
        cell(est.se_of_log),
        cell(est.log_permanent(n_sites)),
        cell(est.ess),
    ]);

    let mut outcome = VerbOutcome::new(doc);
    outcome.row_routes = vec![format!("gaussian batches={}", est.batch_count)];
    outcome.argv = vec![
        "--dim".into(),
        args.dim.to_string(),
        "--side".into(),
        args.side.to_string(),
        "--beta".into(),
        cell(args.beta),
        "--samples".into(),
        args.samples.to_string(),
    ];
    Ok(outcome)
}

const RATE_COLUMNS: &[&str] = &[
    "c",
    "a",
    "g1",
    "vg1",
    "f",
    "boundary_residual",
    "first_integral_residual",
];

fn rate_row(c: f64, tol: f64) -> Result<Vec<String>, CliError> {
    let p = rate_function_point(c, tol, None)?;
    Ok(vec![
        cell(p.c),
        cell(p.a),
        cell(p.g1),
        cell(p.vg1),
        cell(p.f),
        cell(p.boundary_residual),
        cell(p.first_integral_residual),
    ])
}

pub fn run_ode(args: &OdeArgs) -> Result<VerbOutcome, CliError> {
    let mut doc = CsvDoc::new("ode", RATE_COLUMNS);
    let values = args.c.values();
    let mut routes = Vec::with_capacity(values.len());
    for &c in &values {
        doc.push_row(rate_row(c, args.tol)?);
        routes.push(format!(
            "ode={}",
            if c <= srp_core::ode::SHOOTING_HORIZON_CEILING {
                "shooting"
            } else {
                "implicit"
            }
        ));
    }
    let mut outcome = VerbOutcome::new(doc);
    outcome.row_routes = routes;
    outcome.argv = vec![
        "--c".into(),
        args.c.canonical(),
        "--tol".into(),
        cell(args.tol),
    ];
    Ok(outcome)
}

pub fn run_curves(args: &CurvesArgs) -> Result<VerbOutcome, CliError> {
    if !(args.step > 0.0) || args.c_max < args.c_min || !(args.c_min > 0.0) {
        return Err(CliError::Invalid(format!(
            "curves need 0 < c-min <= c-max and step > 0, got [{}, {}] step {}",
            args.c_min, args.c_max, args.step
        )));
    }
    let count = ((args.c_max - args.c_min) / args.step + 1.5).floor() as usize;
    let grid: Vec<f64> = (0..count)
        .map(|k| args.c_min + k as f64 * args.step)
        .filter(|&c| c <= args.c_max + 1e-12 * args.step)
        .collect();

    let mut doc = CsvDoc::new("curves", RATE_COLUMNS);
    let mut flags = Vec::new();
    let mut g1_prev = f64::INFINITY;
    let mut f_prev = f64::INFINITY;
    let mut routes = Vec::with_capacity(grid.len());
    for &c in &grid {
        let p = rate_function_point(c, args.tol, None)?;
        if p.g1 >= g1_prev {
            flags.push(format!("g1-not-decreasing at c={c}"));
        }
        if p.f > f_prev + 1e-9 {
            flags.push(format!("f-increasing at c={c}"));
        }
        g1_prev = p.g1;
        f_prev = p.f;
        doc.push_row(vec![
            cell(p.c),
            cell(p.a),
            cell(p.g1),
            cell(p.vg1),
            cell(p.f),
            cell(p.boundary_residual),
            cell(p.first_integral_residual),
        ]);
        routes.push(format!(
            "ode={}",
            if c <= srp_core::ode::SHOOTING_HORIZON_CEILING {
                "shooting"
            } else {
                "implicit"
            }
        ));
    }
    let mut outcome = VerbOutcome::new(doc);
    outcome.flags = flags;
    outcome.row_routes = routes;
    outcome.argv = vec![
        "--c-min".into(),
        cell(args.c_min),
        "--c-max".into(),
        cell(args.c_max),
        "--step".into(),
        cell(args.step),
        "--tol".into(),
        cell(args.tol),
    ];
    Ok(outcome)
}

pub fn run_kernel(args: &KernelArgs) -> Result<VerbOutcome, CliError> {
    let radius = args.radius.unwrap_or(DEFAULT_RADIUS);
    let nodes = args.nodes.unwrap_or_else(|| default_node_count(args.beta));
    if args.side < 2 {
        return Err(CliError::Invalid(format!(
            "kernel expansion needs side >= 2, got {}",
            args.side
        )));
    }
    let op = build_radial_operator(args.beta, radius, nodes)?;
    let expansion =
        srp_core::kernel::kernel_log_e_with_grid(args.beta, args.side, radius, nodes)?;
    let lambda1 = principal_eigenvalue(&op)?;
    let hs_reference = hs_norm_sq_reference(args.beta)?;
    let hs_rel_err = (hs_norm_sq(&op) - hs_reference).abs() / hs_reference;

    let mut doc = CsvDoc::new(
        "kernel",
        &["N", "beta", "log_E", "per_site", "lambda1", "hs_norm_check_rel_err"],
    );
    doc.push_row(vec![
        args.side.to_string(),
        cell(args.beta),
        cell(expansion.log_e),
        cell(expansion.per_site()),
        cell(lambda1),
        cell(hs_rel_err),
    ]);

    let mut outcome = VerbOutcome::new(doc);
    outcome.row_routes = vec![format!("kernel nodes={nodes} radius={radius}")];
    outcome.argv = vec![
        "--side".into(),
        args.side.to_string(),
        "--beta".into(),
        cell(args.beta),
        "--radius".into(),
        cell(radius),
        "--nodes".into(),
        nodes.to_string(),
    ];
    Ok(outcome)
}
