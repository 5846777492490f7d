use drdid_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("column `{0}` not found in the data header")]
    MissingColumn(String),
    #[error("column `{column}` must have exactly two levels, found {found:?}")]
    NonBinaryTimeOrGroup { column: String, found: Vec<String> },
    #[error("no usable rows remain after dropping {dropped} with non-numeric values")]
    EmptyAfterFiltering { dropped: usize },
    #[error("malformed data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Machine-readable error record written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub error: &'a str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::MissingColumn(_) => "missing_column",
            CliError::NonBinaryTimeOrGroup { .. } => "non_binary_time_or_group",
            CliError::EmptyAfterFiltering { .. } => "empty_after_filtering",
            CliError::Data(_) => "data",
            CliError::Core(e) => core_kind(e),
        }
    }

    /// 1 usage, 2 data, 3 estimation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. }
            | CliError::MissingColumn(_)
            | CliError::NonBinaryTimeOrGroup { .. }
            | CliError::EmptyAfterFiltering { .. }
            | CliError::Data(_) => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidSpec(_)
                | CoreError::InvalidTerm(_)
                | CoreError::MissingIntercept
                | CoreError::UnknownCovariate(_)
                | CoreError::InvalidArgument(_) => 1,
                CoreError::EmptyCell { .. }
                | CoreError::DuplicatePanelRow { .. }
                | CoreError::RaggedCovariates { .. }
                | CoreError::InvalidTable(_)
                | CoreError::EmptyValues
                | CoreError::DegenerateOutcome
                | CoreError::MissingSecondOutcome
                | CoreError::NoTreatedRows => 2,
                _ => 3,
            },
        }
    }

    pub fn record(&self) -> String {
        let rec = ErrorRecord { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() };
        serde_json::to_string(&rec).expect("error record serializes")
    }
}

fn core_kind(e: &CoreError) -> &'static str {
    match e {
        CoreError::EmptyCell { .. } => "empty_cell",
        CoreError::DuplicatePanelRow { .. } => "duplicate_panel_row",
        CoreError::RaggedCovariates { .. } => "ragged_covariates",
        CoreError::InvalidTable(_) => "invalid_table",
        CoreError::UnknownCovariate(_) => "unknown_covariate",
        CoreError::InvalidTerm(_) => "invalid_term",
        CoreError::MissingIntercept => "missing_intercept",
        CoreError::EmptyValues => "empty_values",
        CoreError::DegenerateOutcome => "degenerate_outcome",
        CoreError::RankDeficient => "rank_deficient",
        CoreError::DimensionMismatch(_) => "dimension_mismatch",
        CoreError::Solver { .. } => "solver",
        CoreError::NoTreatedRows => "no_treated_rows",
        CoreError::QuantileAboveSupport { .. } => "quantile_above_support",
        CoreError::GridMismatch => "grid_mismatch",
        CoreError::MissingSecondOutcome => "missing_second_outcome",
        CoreError::ExcessiveClipping { .. } => "excessive_clipping",
        CoreError::TooFewPairs => "too_few_pairs",
        CoreError::AllReplicatesFailed => "all_replicates_failed",
        CoreError::ExcessiveNonConvergence { .. } => "excessive_non_convergence",
        CoreError::DegenerateScale { .. } => "degenerate_scale",
        CoreError::InvalidSpec(_) => "invalid_spec",
        CoreError::AssumptionViolated(_) => "assumption_violated",
        CoreError::InvalidArgument(_) => "invalid_argument",
    }
}

pub type CliResult<T> = Result<T, CliError>;
