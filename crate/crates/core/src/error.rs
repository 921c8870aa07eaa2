use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ingest error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Ingest { line: Option<usize>, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular design{}: {message}", equation.map(|e| format!(" in equation {e}")).unwrap_or_default())]
    SingularDesign {
        equation: Option<usize>,
        message: String,
    },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("window plan error: {0}")]
    Plan(String),

    #[error("rolling run failed: {0}")]
    Run(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("donor pool error: {0}")]
    DonorPool(String),

    #[error("invalid simulation spec: {0}")]
    Spec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn ingest(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Ingest {
            line,
            message: message.into(),
        }
    }

    /// Short machine-friendly tag, used for window flags and diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ingest { .. } => "Ingest",
            Error::InsufficientData(_) => "InsufficientData",
            Error::SingularDesign { .. } => "SingularDesign",
            Error::DegenerateVariance(_) => "DegenerateVariance",
            Error::Alignment(_) => "Alignment",
            Error::Plan(_) => "Plan",
            Error::Run(_) => "Run",
            Error::Domain(_) => "Domain",
            Error::DonorPool(_) => "DonorPool",
            Error::Spec(_) => "Spec",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io { .. } => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
