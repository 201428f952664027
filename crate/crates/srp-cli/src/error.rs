//! Exit-code policy.
//!
//! 0 success, 1 I/O failure, 2 invalid input or infeasible request,
//! 3 solver failure (a numeric routine could not deliver the requested
//! accuracy), 4 strict-mode flag (a scan raised feasibility or agreement
//! flags and `--strict` was set).

use srp_core::gaussian::GaussianError;
use srp_core::kernel::KernelError;
use srp_core::lattice::LatticeError;
use srp_core::matrix::MatrixError;
use srp_core::mcmc::McmcError;
use srp_core::ode::OdeError;
use srp_core::permanent::PermanentError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<MatrixError> for CliError {
    fn from(e: MatrixError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<McmcError> for CliError {
    fn from(e: McmcError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<GaussianError> for CliError {
    fn from(e: GaussianError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::NoBracket { .. }
            | OdeError::RootFailure { .. }
            | OdeError::IntegrationFailure { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::NoConvergence(_) => CliError::Solver(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<PermanentError> for CliError {
    fn from(e: PermanentError) -> Self {
        match e {
            PermanentError::NonPositiveSum(_) => CliError::Solver(e.to_string()),
            PermanentError::Rate(inner) => inner.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}
