use thiserror::Error;

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Inference,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("no token survives the vocabulary threshold")]
    EmptyVocabulary,
    #[error("weight at position {index} is not positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("no document survives preprocessing")]
    EmptyCorpus,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("document {0} has zero probability under every topic")]
    DegenerateDocument(String),
    #[error("document {doc} lacks covariate `{name}`")]
    MissingCovariate { doc: String, name: String },
    #[error("unknown level `{level}` for covariate `{name}`")]
    UnknownLevel { name: String, level: String },
    #[error("{divergent} of {total} post-burn-in proposals diverged")]
    AllDivergent { divergent: usize, total: usize },
    #[error("target is not finite at any initial point tried")]
    InitFailed,
    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),
    #[error("topic-count rule never triggered up to the cap J = {cap}")]
    CapReached { cap: usize },
    #[error("infeasible design: max inclusion probability {max_pi:.4} > 1; lower the boost factor or the sample size")]
    InfeasibleDesign { max_pi: f64 },
    #[error("invalid interval: lower {lower} > upper {upper}")]
    InvalidInterval { lower: f64, upper: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::InfeasibleDesign { .. } | Error::CapReached { .. } => {
                ErrorKind::Config
            }
            Error::NonFinite(_)
            | Error::AllDivergent { .. }
            | Error::InitFailed
            | Error::InsufficientDraws(_) => ErrorKind::Inference,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
