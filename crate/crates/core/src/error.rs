use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or incomplete inputs: unknown levels, bad beam geometry,
    /// missing calibration data, malformed config files.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside the domain of an operation.
    #[error("invalid input: {0}")]
    Validation(String),

    /// The coupling graph asks for something the engine cannot represent.
    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("integration failed at t = {t_last:.6e} s: {reason}")]
    Integration { t_last: f64, reason: String },

    #[error("photon target {target} not reached: N = {achieved:.4} at t = {t_final:.6e} s")]
    TargetNotReached { target: f64, achieved: f64, t_final: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    /// A scan produced nothing usable.
    #[error("scan failed: {0}")]
    Scan(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Configuration-class failures map to exit code 2 in the CLI.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Validation(_) | Error::Json(_))
    }
}
