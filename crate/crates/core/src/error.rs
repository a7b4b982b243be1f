use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("empty sample")]
    EmptySample,

    #[error("degenerate sample: variance {variance:e} below underflow threshold for mean {mean}")]
    DispersionUnderflow { mean: f64, variance: f64 },

    #[error("design deficiency: level {level} has no trials")]
    DesignDeficiency { level: usize },

    #[error("non-finite log-density for subject {subject}, level {level}, record {record}")]
    Evaluation {
        subject: usize,
        level: usize,
        record: usize,
    },

    #[error("reconstruction refused: {0}")]
    ReconstructionRefused(String),

    #[error("response probability undefined at level {level}: no non-missing responses")]
    UndefinedProbability { level: usize },

    #[error("every trial is missing its response")]
    EmptyPartition,

    #[error("too many truncated replicates: {truncated} of {reps} hit max_steps")]
    Truncation { truncated: usize, reps: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("model did not converge: {0}")]
    Convergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::ParameterDomain(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
