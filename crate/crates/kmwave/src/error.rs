use thiserror::Error;

/// Errors shared by all modules of the toolkit.
#[derive(Debug, Error)]
pub enum KmError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("iteration did not converge: {0}")]
    Convergence(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solution diverged (NaN/overflow): {0}")]
    Divergence(String),

    #[error("positivity violated beyond tolerance: {0}")]
    Positivity(String),

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("shift inconsistent with unit spectral radius: {0}")]
    InconsistentShift(String),

    #[error("proof gadget infeasible: {0}")]
    GadgetInfeasible(String),

    #[error("front too close to the domain boundary: {0}")]
    DomainExhausted(String),

    #[error("no front formed: {0}")]
    NoFront(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KmError>;

impl KmError {
    /// Process exit code contract: 0 success, 2 config error,
    /// 3 numerical non-convergence, 4 precondition, 5 domain exhausted.
    pub fn exit_code(&self) -> i32 {
        match self {
            KmError::Config(_) | KmError::Argument(_) => 2,
            KmError::Convergence(_)
            | KmError::Divergence(_)
            | KmError::Positivity(_)
            | KmError::Bracketing(_)
            | KmError::InconsistentShift(_)
            | KmError::NoFront(_) => 3,
            KmError::Precondition(_) | KmError::GadgetInfeasible(_) => 4,
            KmError::DomainExhausted(_) => 5,
            KmError::Io(_) | KmError::Json(_) => 2,
        }
    }

    /// Stable machine-readable class name for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            KmError::Argument(_) => "argument",
            KmError::Config(_) => "config",
            KmError::Convergence(_) => "convergence",
            KmError::Precondition(_) => "precondition",
            KmError::Divergence(_) => "divergence",
            KmError::Positivity(_) => "positivity",
            KmError::Bracketing(_) => "bracketing",
            KmError::InconsistentShift(_) => "inconsistent_shift",
            KmError::GadgetInfeasible(_) => "gadget_infeasible",
            KmError::DomainExhausted(_) => "domain_exhausted",
            KmError::NoFront(_) => "no_front",
            KmError::Io(_) => "io",
            KmError::Json(_) => "json",
        }
    }
}
