use thiserror::Error;

/// Validation failure for an [`crate::Mdp`] or [`crate::Policy`].
///
/// Step indices in these errors are 1-based (`h = 1..=H`); state, action and
/// next-state indices are 0-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("negative transition mass {value} at (h={step}, s={state}, a={action}) -> s'={next_state}")]
    NegativeMass {
        step: usize,
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    #[error("transition row at (h={step}, s={state}, a={action}) sums to {sum}")]
    RowSum {
        step: usize,
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error("mean reward {value} at (h={step}, s={state}, a={action}) is outside [0, 1]")]
    RewardOutOfRange {
        step: usize,
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("initial distribution entry {state} is negative ({value})")]
    NegativeInitial { state: usize, value: f64 },
    #[error("initial distribution sums to {sum}")]
    InitialSum { sum: f64 },
    #[error("policy row at (h={step}, s={state}) is not a distribution (sum {sum}, min {min})")]
    PolicyRow {
        step: usize,
        state: usize,
        sum: f64,
        min: f64,
    },
    #[error("empty dimension: H, S and A must all be positive")]
    EmptyDimension,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mdp(#[from] MdpError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value {value} at index {index} is outside [0, {upper}]")]
    ValueOutOfRange { index: usize, value: f64, upper: f64 },

    #[error("perturbed transition at (h={step}, s={state}, a={action}) -> s'={next_state} would be negative ({value}); raise n")]
    NonnegativityViolation {
        step: usize,
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },

    #[error("rate fit needs at least 3 positive points, got {0}")]
    InsufficientPoints(usize),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error document.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Mdp(_) => "invalid_mdp",
            Error::Shape(_) => "shape_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ValueOutOfRange { .. } => "value_out_of_range",
            Error::NonnegativityViolation { .. } => "nonnegativity_violation",
            Error::InsufficientPoints(_) => "insufficient_points",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
