use thiserror::Error;

/// Unified error type for the whole library.
#[derive(Debug, Error)]
pub enum Error {
    /// CSV header does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell failed to parse at the given 1-based data row.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// A parsed value violates a field constraint at the given data row.
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    /// Samples are out of order within a drive.
    #[error("ordering error: {0}")]
    Ordering(String),

    /// An argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Feature extraction hit a non-finite input.
    #[error("feature extraction error: {0}")]
    Extraction(String),

    /// A numeric guard tripped (division by a vanishing denominator, etc.).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Model training could not proceed.
    #[error("fit error: {0}")]
    Fit(String),

    /// Prediction input does not match the trained model.
    #[error("inference error: {0}")]
    Inference(String),

    /// A metric is undefined for the given inputs.
    #[error("metric error: {0}")]
    Metric(String),

    /// Stratified folding is impossible for the given labels.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Resampling is impossible for the given labels.
    #[error("resampling error: {0}")]
    Resampling(String),

    /// An operation was called in an invalid state.
    #[error("state error: {0}")]
    State(String),

    /// Hyperparameter search failed outright.
    #[error("optimization error: {0}")]
    Optimization(String),

    /// A simulation plan is inconsistent.
    #[error("plan error: {0}")]
    Plan(String),

    /// Experiment configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; wraps the underlying error with stage context.
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// A cross-validation fold failed; wraps the underlying error.
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    /// A feature-elimination iteration failed; wraps the underlying error.
    #[error("elimination at subset size {subset_size}: {source}")]
    Elimination {
        subset_size: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an error with the name of the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
