use thiserror::Error;

/// Errors raised by inference, evaluation and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("noise precision rate became non-positive in view {view}")]
    NegativeRate { view: usize },

    #[error("pruning would remove every latent column")]
    AllPruned,

    #[error("class probability {value:e} is numerically zero")]
    DegenerateNormalizer { value: f64 },

    #[error("unknown view '{0}'")]
    UnknownView(String),

    #[error("scores contain a single class")]
    SingleClass,

    #[error("column {0} has no observed entries")]
    EmptyColumn(usize),

    #[error("{file}: row {row}, column {col}: {message}")]
    Parse {
        file: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("{0}")]
    Domain(String),

    #[error("{0}")]
    ShapeMismatch(String),

    #[error("unsupported model container version '{found}'")]
    VersionMismatch { found: String },

    #[error("corrupt model record: {0}")]
    CorruptRecord(String),

    #[error("restart {index}: {source}")]
    Restart {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-parseable error class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::InvalidData(_) => "InvalidData",
            Error::NegativeRate { .. } => "NegativeRate",
            Error::AllPruned => "AllPruned",
            Error::DegenerateNormalizer { .. } => "DegenerateNormalizer",
            Error::UnknownView(_) => "UnknownView",
            Error::SingleClass => "SingleClass",
            Error::EmptyColumn(_) => "EmptyColumn",
            Error::Parse { .. } => "ParseError",
            Error::Domain(_) => "DomainError",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptRecord(_) => "CorruptRecord",
            Error::Restart { source, .. } => source.class(),
            Error::Io(_) => "IoError",
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::NegativeRate { .. }
            | Error::AllPruned
            | Error::DegenerateNormalizer { .. } => true,
            Error::Restart { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
