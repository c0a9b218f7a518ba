use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeomError>;

/// Errors raised by the geometry routines.
///
/// Variants are split so that callers (the CLI in particular) can tell
/// numerical failures apart from malformed input.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("joint {joint} is behind the camera (Z = {depth} mm)")]
    BehindCamera { joint: usize, depth: f64 },

    #[error("rotation matrix is not orthonormal (Gram deviation {deviation:e})")]
    InvalidRotation { deviation: f64 },

    #[error("target {joint} lies outside the heatmap volume")]
    OutOfVolume { joint: usize },

    #[error("underdetermined system: {used} joints used, at least {required} required")]
    Underdetermined { used: usize, required: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no usable bones: every bone has an invalid endpoint")]
    NoBones,

    #[error("optimizer did not converge after {iterations} iterations (Z0 = {z0} mm, cost = {cost})")]
    NotConverged { iterations: usize, z0: f64, cost: f64 },

    #[error("bone set is not a tree rooted at joint {root}: {reason}")]
    NotATree { root: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("rejection sampling exhausted after {0} attempts")]
    RejectionBudget(usize),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl GeomError {
    /// True for failures of the numerics rather than of the input format.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GeomError::DegenerateGeometry(_)
                | GeomError::NotConverged { .. }
                | GeomError::Underdetermined { .. }
                | GeomError::NoBones
                | GeomError::BehindCamera { .. }
                | GeomError::RejectionBudget(_)
        )
    }
}

impl From<std::io::Error> for GeomError {
    fn from(e: std::io::Error) -> Self {
        GeomError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GeomError {
    fn from(e: serde_json::Error) -> Self {
        GeomError::Parse(e.to_string())
    }
}
