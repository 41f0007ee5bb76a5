use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes. Each maps onto one process exit code in the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("ergodic consistency violated: {detail}")]
    ErgodicConsistency { detail: String },

    #[error("protocol failed validation: {0}")]
    Validation(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("degenerate law: component {state} = {value:e} at t = {time}")]
    DegenerateLaw { state: usize, value: f64, time: f64 },

    #[error("integrator error: {0}")]
    Integrator(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate spectrum: power iteration stalled after {iterations} iterations (gap ratio ~ {gap_ratio:.6})")]
    DegenerateSpectrum { iterations: usize, gap_ratio: f64 },

    #[error("probability conservation violated: Perron eigenvalue {eigenvalue} differs from 1")]
    Conservation { eigenvalue: f64 },

    #[error("thinning bound violated: K_{state}({time}) = {rate} > bound {bound}")]
    BoundViolation {
        state: usize,
        time: f64,
        rate: f64,
        bound: f64,
    },

    #[error("spectral gap too small: |Re lambda_2| = {0:e}")]
    SpectralGap(f64),

    #[error("estimate unstable: max exponent {max_exponent} overflows")]
    EstimateUnstable { max_exponent: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse category used to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Validation,
    Numerical,
    Statistical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Grid(_) | Error::Io(_) | Error::Json(_) => ErrorClass::Config,
            Error::ErgodicConsistency { .. } | Error::Validation(_) | Error::Construction(_) => {
                ErrorClass::Validation
            }
            Error::DegenerateLaw { .. }
            | Error::Integrator(_)
            | Error::Precondition(_)
            | Error::DegenerateSpectrum { .. }
            | Error::Conservation { .. }
            | Error::BoundViolation { .. }
            | Error::SpectralGap(_) => ErrorClass::Numerical,
            Error::EstimateUnstable { .. } | Error::InsufficientSamples(_) => {
                ErrorClass::Statistical
            }
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Grid(_) => "grid",
            Error::ErgodicConsistency { .. } => "ergodic_consistency",
            Error::Validation(_) => "validation",
            Error::Construction(_) => "construction",
            Error::DegenerateLaw { .. } => "degenerate_law",
            Error::Integrator(_) => "integrator",
            Error::Precondition(_) => "precondition",
            Error::DegenerateSpectrum { .. } => "degenerate_spectrum",
            Error::Conservation { .. } => "conservation",
            Error::BoundViolation { .. } => "bound_violation",
            Error::SpectralGap(_) => "spectral_gap",
            Error::EstimateUnstable { .. } => "estimate_unstable",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
