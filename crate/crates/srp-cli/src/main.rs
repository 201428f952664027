//! `srp` — spatial-random-permutation toolkit.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 solver failure,
//! 4 strict-mode flags raised.

// Guards written as `!(x > 0.0)` are deliberate: the negated form is also
// true for NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod error;
mod output;
mod scan;
mod verbs;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::args::{Cli, Verb};
use crate::error::CliError;
use crate::output::{RunManifest, MANIFEST_SCHEMA};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }

    let started = Instant::now();
    let outcome = match &cli.verb {
        Verb::Perm(a) => verbs::run_perm(a)?,
        Verb::Sample(a) => verbs::run_sample(a, cli.seed, cli.out.as_ref())?,
        Verb::Gaussian(a) => verbs::run_gaussian(a, cli.seed)?,
        Verb::Ode(a) => verbs::run_ode(a)?,
        Verb::Kernel(a) => verbs::run_kernel(a)?,
        Verb::Scan(a) => scan::run_scan(a, cli.seed)?,
        Verb::Curves(a) => verbs::run_curves(a)?,
    };

    outcome.doc.write(cli.out.as_deref())?;
    let mut outputs = vec![cli
        .out
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "-".into())];
    for (path, doc) in &outcome.side_docs {
        doc.write(Some(path))?;
        outputs.push(path.display().to_string());
    }

    for flag in &outcome.flags {
        eprintln!("warning: {flag}");
    }

    if let Some(manifest_path) = &cli.manifest {
        let mut argv = vec![cli.verb.name().to_string()];
        argv.extend(outcome.argv.iter().cloned());
        argv.push("--seed".into());
        argv.push(cli.seed.to_string());
        if let Some(threads) = cli.threads {
            argv.push("--threads".into());
            argv.push(threads.to_string());
        }
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            verb: cli.verb.name().into(),
            argv,
            seed: cli.seed,
            threads: cli.threads,
            rows: outcome.doc.n_rows(),
            flags: outcome.flags.clone(),
            row_routes: outcome.row_routes.clone(),
            outputs,
            wall_clock_ms: started.elapsed().as_millis(),
        };
        manifest.write(manifest_path)?;
    }

    if cli.strict && !outcome.flags.is_empty() {
        eprintln!(
            "strict mode: {} flag(s) raised, failing the run",
            outcome.flags.len()
        );
        return Ok(4);
    }
    Ok(0)
}
