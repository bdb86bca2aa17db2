use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("moment order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("error characteristic function underflows at t = {t} (psi_U = {value:e})")]
    Degenerate { t: f64, value: f64 },

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("empirical phase undefined at t = {t}: |cf| = {modulus:e}")]
    PhaseUndefined { t: f64, modulus: f64 },

    #[error("base density underflows at z = {0}")]
    TailUndefined(f64),

    #[error("quadrature produced a non-finite value: {0}")]
    Quadrature(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("observed variance {observed} does not exceed error variance {error}")]
    NegativeSignalVariance { observed: f64, error: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Csv(_) => 2,
            Error::Json(e) if e.is_syntax() || e.is_eof() => 2,
            Error::Estimation(_)
            | Error::Degenerate { .. }
            | Error::InsufficientData { .. }
            | Error::PhaseUndefined { .. }
            | Error::TailUndefined(_)
            | Error::Quadrature(_)
            | Error::NegativeSignalVariance { .. } => 3,
            Error::Io(_) => 1,
            _ => 4,
        }
    }
}
