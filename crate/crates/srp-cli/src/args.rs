//! Command-line surface: one subcommand per route plus the scan/curves
//! orchestrators, with the shared output/reproducibility flags global.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "srp",
    version,
    about = "Spatial random permutations: exact permanents, samplers, and asymptotic scans",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,

    /// CSV output path (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Write a JSON run manifest here; re-running its recorded argv
    /// reproduces every CSV byte.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// Worker threads (default: all cores). Results are identical for any
    /// thread count; this only changes wall-clock.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Master seed for the sampling verbs.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Exit with code 4 when any feasibility or cross-route flag is raised.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Exact log-permanent of one box with a displacement enclosure.
    Perm(PermArgs),
    /// Metropolis sampling of one box.
    Sample(SampleArgs),
    /// Gaussian-moment Monte Carlo estimate of one box's permanent.
    Gaussian(GaussianArgs),
    /// Rate-function values over one horizon or a horizon range.
    Ode(OdeArgs),
    /// Heat-kernel operator expansion of a one-dimensional box.
    Kernel(KernelArgs),
    /// Regime scan: every route on a (side, beta) grid, cross-checked.
    Scan(ScanArgs),
    /// Rate-function curves on a uniform horizon grid.
    Curves(CurvesArgs),
}

impl Verb {
    pub fn name(&self) -> &'static str {
        match self {
            Verb::Perm(_) => "perm",
            Verb::Sample(_) => "sample",
            Verb::Gaussian(_) => "gaussian",
            Verb::Ode(_) => "ode",
            Verb::Kernel(_) => "kernel",
            Verb::Scan(_) => "scan",
            Verb::Curves(_) => "curves",
        }
    }
}

#[derive(Debug, Args)]
pub struct PermArgs {
    /// Lattice dimension (1, 2, or 3).
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Box side N.
    #[arg(long)]
    pub side: usize,
    /// Inverse temperature β ≥ 0.
    #[arg(long)]
    pub beta: f64,
    /// Finite-difference step for the displacement enclosure
    /// (default: max(1e-3·β, 1e-4); must stay below β).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Force the factorial-time enumeration oracle (n ≤ 9).
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub side: usize,
    #[arg(long)]
    pub beta: f64,
    /// Warm-up proposals (default: 50·n·max(1, βN) heuristic).
    #[arg(long)]
    pub burnin: Option<u64>,
    /// Retained samples per chain.
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    /// Proposals between retained samples. Keep odd near β = 0: the
    /// all-accept walk alternates permutation parity every step.
    #[arg(long, default_value_t = 11)]
    pub thin: u64,
    /// Independent chains, merged in chain order.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Side CSV for the displacement histogram (default: derived from
    /// --out as `<stem>_hist.csv`; omitted when writing to stdout).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GaussianArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub side: usize,
    /// Inverse temperature β > 0.
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
}

#[derive(Debug, Args)]
pub struct OdeArgs {
    /// Horizon: a single value `1.5` or an inclusive range `0.1:10:0.1`
    /// (start:end:step).
    #[arg(long)]
    pub c: CRange,
    /// Solver tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Box side N ≥ 2 (the expansion is one-dimensional).
    #[arg(long)]
    pub side: usize,
    /// Inverse temperature β > 0.
    #[arg(long)]
    pub beta: f64,
    /// Radial truncation (default 8, minimum 6).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Quadrature nodes (default 1024, or 4096 for β ≤ 0.05; minimum 512).
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Comma-separated box sides.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sides: Vec<usize>,
    /// Comma-separated inverse temperatures.
    #[arg(long, value_delimiter = ',', required = true)]
    pub betas: Vec<f64>,
    /// Retained Metropolis samples per cell.
    #[arg(long, default_value_t = 50_000)]
    pub samples: u64,
    /// Metropolis thinning (odd keeps β = 0 cells parity-balanced).
    #[arg(long, default_value_t = 11)]
    pub thin: u64,
    /// Gaussian-moment samples per feasible cell.
    #[arg(long, default_value_t = 200_000)]
    pub gaussian_samples: u64,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long, default_value_t = 0.1)]
    pub c_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub c_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

/// A single horizon or an inclusive start:end:step range.
#[derive(Debug, Clone, Copy)]
pub enum CRange {
    Single(f64),
    Range { start: f64, end: f64, step: f64 },
}

impl CRange {
    /// Materialize the horizon grid (endpoint included up to rounding).
    pub fn values(&self) -> Vec<f64> {
        match *self {
            CRange::Single(c) => vec![c],
            CRange::Range { start, end, step } => {
                let count = ((end - start) / step + 1.5).floor() as usize;
                (0..count)
                    .map(|k| start + k as f64 * step)
                    .filter(|&c| c <= end + 1e-12 * step)
                    .collect()
            }
        }
    }

    /// Canonical textual form (round-trips through [`FromStr`]).
    pub fn canonical(&self) -> String {
        match *self {
            CRange::Single(c) => format!("{c}"),
            CRange::Range { start, end, step } => format!("{start}:{end}:{step}"),
        }
    }
}

impl FromStr for CRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |p: &str| -> Result<f64, String> {
            p.parse::<f64>().map_err(|e| format!("bad horizon '{p}': {e}"))
        };
        match parts.as_slice() {
            [one] => Ok(CRange::Single(parse(one)?)),
            [start, end, step] => {
                let (start, end, step) = (parse(start)?, parse(end)?, parse(step)?);
                if !(step > 0.0) || end < start {
                    return Err(format!("range '{s}' needs end >= start and step > 0"));
                }
                Ok(CRange::Range { start, end, step })
            }
            _ => Err(format!("expected 'c' or 'start:end:step', got '{s}'")),
        }
    }
}
