use std::path::PathBuf;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline. Messages carry the owning module as
/// a prefix so CLI output can be traced back to its source.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter: {0}")]
    Parameter(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse: {file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("graph: {0}")]
    Graph(String),

    #[error("input: {0}")]
    Input(String),

    #[error("design: {message} (consumers: {consumers:?})")]
    Design {
        message: String,
        consumers: Vec<NodeId>,
    },

    #[error("qp: {0}")]
    Solver(String),

    #[error("boost: zero baseline weight on optimized edge {src}->{dst}")]
    DegenerateScore { src: NodeId, dst: NodeId },

    #[error("boost: optimized parents take all exposure mass of consumers {0:?}")]
    DivisionByZero(Vec<NodeId>),

    #[error("estimator: degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("estimator: insufficient overlap for arm {arm}: no producer has observed children")]
    InsufficientOverlap { arm: usize },

    #[error("estimator: {0}")]
    Estimation(String),

    #[error("report: no data: {0}")]
    NoData(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
