use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}: row {row}, column `{column}`: {message}")]
    Parse {
        origin: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv error in {origin}: {source}")]
    Csv {
        origin: String,
        #[source]
        source: csv::Error,
    },

    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),

    #[error("unknown model ids: {}", .0.join(", "))]
    UnknownModels(Vec<String>),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("metric mismatch: expected [{}], found [{}]", .expected.join(", "), .found.join(", "))]
    MetricMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("no feasible selection: {0}")]
    Infeasible(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
