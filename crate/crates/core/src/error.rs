use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite value in flow layer {layer}: {what}")]
    FlowNumeric { layer: usize, what: &'static str },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("diagnostic undefined: {0}")]
    Diagnostic(String),

    #[error("adaptation aborted at round {round}: {reason}")]
    Adaptation {
        round: usize,
        reason: String,
        trace: Vec<f64>,
    },

    #[error("fit aborted at sweep {sweep}: {reason}")]
    Fit {
        sweep: usize,
        reason: String,
        trace: Vec<f64>,
    },

    #[error("{failed} of {total} model fits failed: {messages:?}")]
    PartialFit {
        failed: usize,
        total: usize,
        messages: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name of the variant, for structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Numeric(_) => "numeric",
            Error::FlowNumeric { .. } => "flow_numeric",
            Error::Unsupported(_) => "unsupported",
            Error::Config(_) => "config",
            Error::Divergence(_) => "divergence",
            Error::Diagnostic(_) => "diagnostic",
            Error::Adaptation { .. } => "adaptation",
            Error::Fit { .. } => "fit",
            Error::PartialFit { .. } => "partial_fit",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}
