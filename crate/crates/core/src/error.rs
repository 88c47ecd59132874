use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("dimension mismatch{}: expected {expected}, got {got}", line_suffix(*.line))]
    DimensionMismatch {
        expected: usize,
        got: usize,
        line: Option<usize>,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown category `{category}` at line {line}")]
    UnknownCategory { category: String, line: usize },
    #[error("k = {k} out of range [1, {tasks}]")]
    KOutOfRange { k: usize, tasks: usize },
    #[error("invalid stream spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty candidate pool")]
    EmptyCandidates,
    #[error("capacity exceeded: {got} exemplars for capacity {capacity}")]
    CapacityExceeded { got: usize, capacity: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("task `{0}` has no eval samples")]
    EmptyEval(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("buffer replays task `{0}` before it was presented")]
    FutureReplay(String),
    #[error("empty summary")]
    EmptySummary,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Toml(#[from] toml::de::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            line: None,
        }
    }

    /// Errors caused by user-supplied configuration rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::KOutOfRange { .. } | Error::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
