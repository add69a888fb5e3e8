use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate cavity at t = {t}: length {length} is not positive")]
    DegenerateCavity { t: f64, length: f64 },

    #[error("no static window: v_tol = {v_tol} is not below the peak boundary speed {max_speed}")]
    DegenerateWindow { v_tol: f64, max_speed: f64 },

    #[error("trajectory segments do not join: boundary gap {gap:e} exceeds {tolerance:e}")]
    Continuity { gap: f64, tolerance: f64 },

    #[error("integration stopped at t = {t} after {steps} steps without reaching the end of the span")]
    NonConvergence { t: f64, steps: usize },

    #[error("state became non-finite at t = {t}{}", .column.map(|c| format!(" in basis column {c}")).unwrap_or_default())]
    Divergence {
        t: f64,
        /// Flat index of the first non-finite state component.
        component: Option<usize>,
        /// In-basis mode whose column diverged.
        column: Option<usize>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("mode index {index} outside 1..={cutoff}")]
    IndexOutOfRange { index: usize, cutoff: usize },

    #[error("cycle {cycle}: coefficient magnitude {magnitude:e} exceeds cap {cap:e}")]
    Instability { cycle: usize, magnitude: f64, cap: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("ill-conditioned fit (covariance condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
