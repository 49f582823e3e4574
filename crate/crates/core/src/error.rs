use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("edge {edge} ({i}-{j}): {reason}")]
    Edge {
        edge: usize,
        i: usize,
        j: usize,
        reason: String,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite state at node {node}")]
    NonFiniteState { node: usize },

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (divergence, singular systems,
    /// training failure) as opposed to bad user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState { .. }
                | Error::Divergence { .. }
                | Error::Numerical(_)
                | Error::TrainingFailure(_)
                | Error::UndefinedMetric(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
