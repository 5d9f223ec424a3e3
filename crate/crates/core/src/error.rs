use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("root finder did not converge at vin = {vin} V")]
    NoConvergence { vin: f64 },

    #[error("model integrity violated: {0}")]
    ModelIntegrity(String),

    #[error("integration unstable at t = {t:e} s (state left the rails); reduce dt below {dt:e} s")]
    Unstable { t: f64, dt: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("target accuracy {target} unattainable; best achievable is {max_achievable}")]
    UnattainableAccuracy { target: f64, max_achievable: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed table {path}: {msg}")]
    Table { path: PathBuf, msg: String },

    #[error("figure error: {0}")]
    Figure(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The underlying error with any stage wrapper removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors that originate in the run configuration.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_))
    }

    /// True for file-system, table and figure errors.
    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io { .. } | Error::Table { .. } | Error::Figure(_))
    }
}
