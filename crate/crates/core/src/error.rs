use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("player index {index} out of range for a game with {players} players")]
    PlayerIndex { index: usize, players: usize },

    #[error("block A[{l},{i}] is not symmetric (max deviation {deviation:e})")]
    Asymmetric { l: usize, i: usize, deviation: f64 },

    #[error("feasible set is empty: {0}")]
    EmptySet(String),

    #[error("point is not in the set (violation {violation:e})")]
    NotInSet { violation: f64 },

    #[error("{what} hit its iteration cap of {iterations} (best residual {residual:e})")]
    IterationCap {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solution set is not certified: {0}")]
    Uncertified(String),

    #[error("grid of {points} points exceeds the guard of {limit}")]
    GridGuard { points: u128, limit: u128 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance error at {field}: {message}")]
    Instance { field: String, message: String },

    #[error("fixture validation failed for {fixture}: {message}")]
    Fixture { fixture: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn instance(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Instance {
            field: field.into(),
            message: message.into(),
        }
    }
}
