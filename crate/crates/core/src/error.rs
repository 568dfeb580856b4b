use thiserror::Error;

/// Errors produced anywhere in the post-processing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dataset line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("missing column `{0}` in dataset header")]
    MissingColumn(String),

    #[error("client {client} has {records} records, fewer than the {parts} requested parts")]
    ClientTooSmall {
        client: usize,
        records: usize,
        parts: usize,
    },

    #[error("invalid fairness specification: {0}")]
    Spec(String),

    #[error("training diverged at round {round}: loss is not finite")]
    Divergence { round: usize },

    #[error("client {client} has no records")]
    EmptyClient { client: usize },

    #[error("missing statistics for client {client}")]
    MissingClient { client: usize },

    #[error(
        "degenerate simplex for group {group}, client {client}: sum of base true positives is {sum}; \
         use the barycentric region form"
    )]
    DegenerateSimplex {
        group: usize,
        client: usize,
        sum: f64,
    },

    #[error("linear program is infeasible (phase-one residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular LAE: sum of base true positives equals 1")]
    SingularLae,

    #[error(
        "LP target lies outside the simplex hull (worst coordinate violation {violation:.3e})"
    )]
    TargetOutsideHull { violation: f64 },

    #[error("no mixing weights for group {group}, client {client}")]
    MissingWeights { group: usize, client: usize },

    #[error("message format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed message: {0}")]
    Message(String),

    #[error("enumeration needs {needed} predictors, above the limit of {limit}")]
    EnumerationTooLarge { needed: u128, limit: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
