use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A non-finite value appeared during integration.
    #[error("non-finite value in {what} (component {component}{})", step_suffix(*.step))]
    NumericBlowup {
        what: &'static str,
        component: usize,
        step: Option<u64>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular or ill-conditioned matrix: {0}")]
    Singular(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("records are not aligned: {0}")]
    Alignment(String),

    /// Filter covariance lost positive semidefiniteness, usually because dt is
    /// too large for the model's fastest mode.
    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    /// Failure inside a time loop, with the step at which it happened.
    #[error("at step {step} (t = {t}): {source}")]
    AtStep {
        step: u64,
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

fn step_suffix(step: Option<u64>) -> String {
    match step {
        Some(k) => format!(", step {k}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a step index to a numeric blowup; other errors pass through.
    pub fn at_step(self, k: u64) -> Self {
        match self {
            Error::NumericBlowup {
                what, component, ..
            } => Error::NumericBlowup {
                what,
                component,
                step: Some(k),
            },
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        match self {
            Error::AtStep { source, .. } => source.is_numeric(),
            e => matches!(e, Error::NumericBlowup { .. } | Error::NotPsd { .. }),
        }
    }
}

/// Returns a blowup error naming the first non-finite entry, if any.
pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(component) => Err(Error::NumericBlowup {
            what,
            component,
            step: None,
        }),
        None => Ok(()),
    }
}
