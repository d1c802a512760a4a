use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),

    #[error("route over {0} customers exceeds the supported maximum of {1}")]
    RouteTooLarge(usize, usize),

    #[error("customer {0} is not covered by any cluster in the pool")]
    Uncovered(usize),

    #[error("probability {0} outside the open interval (0, 1)")]
    Probability(f64),

    #[error("inadmissible action (q1 = {q1}, q2 = {q2}) at inventory position {omega2}")]
    InadmissibleAction { omega2: i64, q1: i64, q2: i64 },

    #[error("value iteration did not converge within {0} cycles")]
    NoConvergence(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
