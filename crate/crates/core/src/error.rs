use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration produced a non-finite state at step {step}")]
    SolverDiverged { step: usize },

    #[error("newton iteration did not converge at step {step}: residual {residual:e} after {iterations} iterations")]
    NewtonFailed {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("root finder did not converge after {sweeps} sweeps")]
    RootFinder { sweeps: usize },

    #[error("optimizer aborted: {0}")]
    Optimizer(String),

    #[error("training failed during {stage}: {source}")]
    Training {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps an error with the training stage it occurred in.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Training {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
