use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solver hit its iteration cap before reaching the
    /// requested residual.
    #[error("eigensolver did not converge after {iterations} iterations (best residual {best_residual:.3e}, requested {requested:.3e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
        requested: f64,
    },

    /// The tube coordinate map degenerates (beta <= 0) at a grid point.
    #[error("coordinate map singular: {0}")]
    Singular(String),

    /// A cross-section domain produced no interior grid nodes, or a
    /// weight became nonpositive on it.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested study falls outside the standing hypotheses
    /// (deformation profile, epsilon guard, ...).
    #[error("out of hypothesis: {0}")]
    OutOfHypothesis(String),

    /// Window search for an unbounded interval exceeded its cap.
    #[error("window cap exceeded: {0}")]
    WindowCap(String),

    /// A sub-solver failed while running a study stage.
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wrap an error with the name of the study stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
