use std::path::PathBuf;

use thiserror::Error;

use crate::model::Model;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Ingest {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("region `{region}` has no median household income")]
    MissingIncome { region: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("fairness term needs at least 2 non-empty groups, batch has {present}")]
    TooFewGroups { present: usize },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: total loss is not finite")]
    Diverged { epoch: usize, last_finite: Box<Model> },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("{0} already exists; pass --force to overwrite")]
    OutputExists(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// True for errors caused by bad user input (configs, data files,
    /// artifacts) as opposed to failures while computing.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Ingest { .. }
            | Error::MissingIncome { .. }
            | Error::Json { .. }
            | Error::Checkpoint(_)
            | Error::MissingArtifact(_)
            | Error::OutputExists(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
