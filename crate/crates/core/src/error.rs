use thiserror::Error;

/// Error type shared by the whole laboratory.
///
/// The variants are split so that a caller (in particular the CLI) can map
/// them onto distinct exit codes:
/// * `Precision` — a requested quantity cannot be certified at the configured
///   precision budget,
/// * `Gate` / `Certificate` — a precondition of a numerical scheme fails
///   (smallness gate, arithmetic certificate, ...),
/// * `Diagnostic` — an internal consistency check of a computed object failed,
/// * `Invalid` — malformed input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("precision budget exceeded: {0}")]
    Precision(String),

    #[error("gate violated: {0}")]
    Gate(String),

    #[error("certificate failed: {0}")]
    Certificate(String),

    #[error("diagnostic failure: {0}")]
    Diagnostic(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::Io(_) | Error::Unsupported(_) => 2,
            Error::Precision(_) => 3,
            Error::Gate(_) | Error::Certificate(_) | Error::Diagnostic(_) => 4,
        }
    }
}
