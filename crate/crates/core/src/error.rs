use nalgebra::Complex;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a type invariant (non-finite sample, bad spacing, ...).
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ill-conditioned moment system (residual {residual:.3e})")]
    IllConditioned { residual: f64 },

    #[error("evaluation point lies within {distance:.3e} of denominator root {root}")]
    PoleProximity { root: Complex<f64>, distance: f64 },

    #[error("no convergence after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("negation is not stratified: cycle {}", cycle.join(" -> "))]
    Unstratified { cycle: Vec<String> },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::IllConditioned { .. } | Error::PoleProximity { .. } | Error::Convergence { .. } => {
                true
            }
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
