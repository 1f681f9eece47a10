use thiserror::Error;

/// Errors raised anywhere in the laboratory.
///
/// Variants map one-to-one onto the failure modes of the individual
/// modules; the harness wraps them with replica/step context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance spectrum is not positive semidefinite: eigenvalue {eigenvalue:.3e} at |xi| = {xi_norm:.4}")]
    NonPositiveSpectrum { eigenvalue: f64, xi_norm: f64 },

    #[error("dimension error: {0}")]
    DimensionError(String),

    #[error("invalid covariance parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported evaluation: {0}")]
    UnsupportedEvaluation(String),

    #[error("compressible V_eff^2 requires a correlation profile w")]
    MissingProfile,

    #[error("quadrature returned an indefinite matrix (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("grid resolution error: {0}")]
    GridResolutionError(String),

    #[error("degenerate time step {0}")]
    DegenerateDt(f64),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("blowup detected at step {step}: sup norm {sup_norm:.3e} exceeds guard {guard:.3e}")]
    BlowupDetected { step: u64, sup_norm: f64, guard: f64 },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("CFL violation: dt = {dt:.3e} exceeds {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("not a density: {0}")]
    NotADensity(String),

    #[error("time mismatch: {0}")]
    TimeMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-uniform time grid")]
    NonUniformTimes,

    #[error("degenerate sample (zero variance)")]
    DegenerateSample,

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("missing config section `{0}`")]
    MissingSection(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("config has {} problem(s): {}", .0.len(), join_errors(.0))]
    ConfigErrors(Vec<Error>),

    #[error("replica {replica}, step {step}: {source}")]
    Replica {
        replica: u64,
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("bad field dump: {0}")]
    BadDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_errors(errs: &[Error]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn in_replica(self, replica: u64, step: u64) -> Error {
        match self {
            e @ Error::Replica { .. } => e,
            e => Error::Replica { replica, step, source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
