use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A field or matrix left the positive cone where admissibility is required.
    #[error("cone violation at {location}: {detail}")]
    ConeViolation { location: String, detail: String },

    /// Grid and geometry (or sample vector) do not fit together.
    #[error("shape error: {0}")]
    Shape(String),

    /// Too few nodes for the requested stencil.
    #[error("grid too coarse: {nodes} nodes, stencil needs {needed}")]
    GridTooCoarse { nodes: usize, needed: usize },

    /// Adaptive step fell below the hard floor.
    #[error("stiffness: step size {dt:e} below floor")]
    Stiffness { dt: f64 },

    /// Quadrature or root finding failed to converge, or a result is not finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An integral diverges for the requested parameters.
    #[error("divergent integral: {0}")]
    Divergence(String),

    /// A construction stage failed one of its constraints.
    #[error("construction failed in {stage}: {detail}")]
    Construction { stage: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn cone(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ConeViolation { location: location.into(), detail: detail.into() }
    }

    pub(crate) fn stage(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Construction { stage, detail: detail.into() }
    }

    /// Prefix a construction error with an outer stage tag, leaving other kinds untouched.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Construction { stage: inner, detail } => {
                Error::Construction { stage, detail: format!("{inner}: {detail}") }
            }
            Error::ConeViolation { location, detail } => {
                Error::Construction { stage, detail: format!("cone violation at {location}: {detail}") }
            }
            other => other,
        }
    }
}
