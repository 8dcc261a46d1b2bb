//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv parse error at row {row}, column {col}: {message}")]
    CsvParse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("no rows")]
    EmptyDataset,

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("non-finite model output for batch item {index}, output '{output}'")]
    NonFiniteOutput { index: usize, output: String },

    #[error("mean absolute deviation undefined for categorical feature '{0}'")]
    MadOnCategorical(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("layer {first} outputs {first_dim} values but layer {second} expects {second_dim}")]
    LayerMismatch {
        first: usize,
        first_dim: usize,
        second: usize,
        second_dim: usize,
    },

    #[error("degenerate design")]
    DegenerateDesign,

    #[error("insufficient samples: {got} after filtering, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("infinite weight; handle analytically (coalition size {size} of {m})")]
    InfiniteKernelWeight { size: usize, m: usize },

    #[error("underdetermined: {n_samples} coalition samples for {m} features")]
    Underdetermined { n_samples: usize, m: usize },

    #[error("k-means requires numeric features, found categorical feature '{0}'")]
    KMeansOnCategorical(String),

    #[error("background sample size {size} exceeds dataset rows {rows}")]
    BackgroundTooLarge { size: usize, rows: usize },

    #[error("no background generated: every counterfactual search failed")]
    NoBackgroundGenerated,

    #[error("nothing to search: no mutable features")]
    NothingToSearch,

    #[error("undefined correlation: zero variance in {0}")]
    UndefinedCorrelation(String),

    #[error("feature count {m} exceeds exact Shapley cap {cap}; use sampling explainer")]
    ShapleyCapExceeded { m: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("solver tolerance exceeded: |phi0 + sum(phi) - f(x)| = {residual}")]
    SolverTolerance { residual: f64 },
}
