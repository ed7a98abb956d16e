use thiserror::Error;

use crate::flow::FlowState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("geometry mismatch between operands")]
    GeometryMismatch,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric is not positive: min eigenvalue {min_eig:.3e} is below the floor {floor:.1e}")]
    NotPositive { min_eig: f64, floor: f64 },

    #[error("Hessian identity residual {0:.3e} exceeds 1e-6: coefficients are not a closed form")]
    NotClosed(f64),

    #[error("flow failed at t = {t}: {reason}")]
    FlowFailure {
        t: f64,
        reason: String,
        last_good: Box<FlowState>,
    },

    #[error("amplitude bracket failed: positivity lost at a = {amplitude:.3e} before min R reached {target:.3e}")]
    BracketFailure { amplitude: f64, target: f64 },

    #[error("shape function is constant")]
    ZeroShape,

    #[error("Λ-gate violated: {gate} = {measured:.6e}, bound {bound:.6e}")]
    GateViolation {
        gate: &'static str,
        measured: f64,
        bound: f64,
    },

    #[error("missing snapshot at t = {0}")]
    MissingSnapshot(f64),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
