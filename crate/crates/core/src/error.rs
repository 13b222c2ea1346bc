use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: axis `{axis}` expected {expected}, found {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("id {id} is outside the vocabulary (bound {bound})")]
    Vocabulary { id: usize, bound: usize },

    #[error("{0}: feature axis is empty")]
    EmptyFeature(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lifecycle error for task {task}: expected state {expected}, found {actual}")]
    Lifecycle {
        task: u16,
        expected: String,
        actual: String,
    },

    #[error("registry error: {0}")]
    Registry(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("audit error: {0}")]
    Audit(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            actual,
        }
    }
}
