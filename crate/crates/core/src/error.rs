use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cell (g={g}, t={t}) has no observations")]
    EmptyCell { g: u8, t: u8 },
    #[error("unit {id} appears more than once in period {t}")]
    DuplicatePanelRow { id: u64, t: u8 },
    #[error("row {row} has {found} covariates, expected {expected}")]
    RaggedCovariates {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("table failed validation: {0}")]
    InvalidTable(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("invalid design term `{0}`")]
    InvalidTerm(String),
    #[error("term list must start with the intercept")]
    MissingIntercept,
    #[error("no values supplied")]
    EmptyValues,
    #[error("all outcome values are equal; no usable threshold")]
    DegenerateOutcome,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("input lengths disagree: {0}")]
    DimensionMismatch(String),
    #[error("solver failed at {location}: {message}")]
    Solver { location: String, message: String },
    #[error("no treated (g=1, t=1) observations with positive weight")]
    NoTreatedRows,
    #[error("quantile {q} lies above the estimated support")]
    QuantileAboveSupport { q: f64 },
    #[error("estimates are defined on different grids")]
    GridMismatch,
    #[error("table has no second outcome")]
    MissingSecondOutcome,
    #[error("clipped probability mass {clipped:.4} exceeds tolerance; a coarser lattice usually helps")]
    ExcessiveClipping { clipped: f64 },
    #[error("need at least two pairs for a rank correlation")]
    TooFewPairs,
    #[error("all bootstrap replicates failed")]
    AllReplicatesFailed,
    #[error("{flagged} of {total} bootstrap replicates did not converge")]
    ExcessiveNonConvergence { flagged: usize, total: usize },
    #[error("scale floor hit on {floored} of {points} grid points")]
    DegenerateScale { floored: usize, points: usize },
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("identifying assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
