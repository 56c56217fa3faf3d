use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("unsupported dimension d = {0} (sphere quadrature and Fourier fields need d in {{2, 3}})")]
    UnsupportedDimension(usize),
    #[error("matrix exponential overflow: |t|*||A|| = {0:e}")]
    Overflow(f64),
    #[error("degenerate dominant eigenvalue: {0}")]
    DegenerateEigenvalue(String),
    #[error("outside the perturbative regime: {0}")]
    OutsideRegime(String),
    #[error("least-squares fit failed: {0}")]
    Fit(String),
    #[error("fixed-point iteration diverged after {iterations} iterations (||A|| = {norm_a:.6}, q/24 = {threshold:.6}, margin = {margin:.3e})")]
    Divergence {
        iterations: usize,
        norm_a: f64,
        threshold: f64,
        margin: f64,
    },
    #[error("time step unstable at t = {time:.4}: sup|phi| = {sup:.6}; try a smaller dt")]
    Instability { time: f64, sup: f64 },
    #[error("invalid initial data: {0}")]
    InvalidInitialData(String),
    #[error("configuration parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Wraps the error with a pipeline stage label.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage labels stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
