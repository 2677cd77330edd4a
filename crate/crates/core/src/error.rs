use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("simulation diverged at sample {sample}: {detail}")]
    Diverged { sample: usize, detail: String },
    #[error("trace too short: {0}")]
    TooShort(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e}, residual {residual:e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
        residual: f64,
    },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
