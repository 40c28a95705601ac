use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e} exceeds {tol:e})")]
    Asymmetric { asymmetry: f64, tol: f64 },

    #[error("matrix is not {required}: {detail}")]
    Definiteness {
        required: &'static str,
        detail: String,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("system matrix A_{step} is singular")]
    SingularTransition { step: usize },

    #[error("{0}")]
    Range(String),

    #[error(
        "forgetting condition violated{}: P^-1 - F has eigenvalue {min_eigenvalue:e}",
        at_step(.step)
    )]
    ForgettingCondition {
        step: Option<usize>,
        min_eigenvalue: f64,
    },

    #[error("invalid forgetting strategy parameters: {0}")]
    StrategyParameter(String),

    #[error("numerical failure at step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    #[error("integration failure at t = {time}: {detail}")]
    Integration { time: f64, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(String),
}

fn at_step(step: &Option<usize>) -> String {
    step.map(|k| format!(" at step {k}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
