use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("architecture mismatch: expected {expected_params} parameters ({expected}), found {found_params} ({found})")]
    ArchitectureMismatch {
        expected: String,
        expected_params: usize,
        found: String,
        found_params: usize,
    },

    #[error("solver exceeded {max_steps} steps before t = {t}")]
    Divergence { max_steps: usize, t: f64 },

    #[error("non-finite state at t = {t}")]
    BlowUp { t: f64 },

    #[error("training step failed on trajectory {trajectory}: {source}")]
    TrainingStep {
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("adjoint solve failed: {0}")]
    Adjoint(Box<Error>),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("training aborted after {count} consecutive failed steps; last failure: {last}")]
    Aborted { count: usize, last: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, found: usize) -> Self {
        Error::Shape {
            what,
            expected,
            found,
        }
    }

    /// True for failures caused by the numerics (blow-up, divergence, bad gradients),
    /// as opposed to configuration, format or I/O problems.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. }
            | Error::BlowUp { .. }
            | Error::NonFiniteGradient
            | Error::Aborted { .. }
            | Error::Adjoint(_) => true,
            Error::TrainingStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::shape(what, expected, found))
    }
}
