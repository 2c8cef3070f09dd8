use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("pixel payload truncated at byte {at} (expected {expected} bytes)")]
    TruncatedPayload { at: usize, expected: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("sun vector outside the +z hemisphere (z = {0})")]
    OutOfHemisphere(f64),

    #[error("spot falls outside the detector")]
    OutOfFov,

    #[error("no signal: {0}")]
    Dark(String),

    #[error("ambiguous peak: {0}")]
    AmbiguousPeak(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("insufficient observations: {0}")]
    Insufficient(String),

    #[error("no feature found: {0}")]
    NoFeature(String),

    #[error("no solution exists: {0}")]
    NoSolution(String),

    #[error("did not converge after {iterations} iterations: {msg}")]
    NotConverged {
        iterations: usize,
        msg: String,
        last: Vec<f64>,
    },

    #[error("query {value} outside model range [{lo}, {hi}]")]
    Extrapolation { value: f64, lo: f64, hi: f64 },

    #[error("malformed event stream: {0}")]
    MalformedStream(String),

    #[error("unidentified sub-FOV: {0}")]
    Unidentified(String),

    #[error("ambiguous sub-FOV: codes {0} and {1} both within tolerance")]
    AmbiguousCode(usize, usize),

    #[error("training diverged (loss is not finite); try a smaller learning rate")]
    Diverged,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
