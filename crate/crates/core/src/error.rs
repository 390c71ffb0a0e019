use thiserror::Error;

/// Every failure the library can report.
///
/// The variants split into two families: validation problems (bad input,
/// out-of-domain arguments, malformed files) and numerical failures
/// (quadrature, root bracketing, step size, failed constructions). The CLI
/// maps the first family to exit code 1 and the second to exit code 2.
#[derive(Debug, Error)]
pub enum SirError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failure on [{a}, {b}] (achieved estimate {estimate})")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    #[error("bracket error: f({a}) = {fa} and f({b}) = {fb} do not change sign")]
    Bracket { a: f64, b: f64, fa: f64, fb: f64 },

    #[error("step-size error: {0}; try a smaller step")]
    StepSize(String),

    #[error("extinction reached: I(s) = {value} <= 0 at s = {s}")]
    Extinction { s: f64, value: f64 },

    #[error("construction failed: {reason} (worst margin {margin:e})")]
    Construction { reason: String, margin: f64 },

    #[error("kernel derivative evaluator missing for `{0}`")]
    MissingDerivative(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SirError {
    /// True for failures of a numerical method rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SirError::Quadrature { .. }
                | SirError::Bracket { .. }
                | SirError::StepSize(_)
                | SirError::Extinction { .. }
                | SirError::Construction { .. }
                | SirError::Io { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SirError::InvalidParameter(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        SirError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SirError>;
