use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path} ({context}): {message}")]
    Parse {
        path: String,
        context: String,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("localization failed: nearest residual {nearest_residual:.3e} at element {nearest_element}")]
    Localization {
        nearest_residual: f64,
        nearest_element: usize,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate spectrum: eigenvalue gap {gap:.3e} below tolerance {tolerance:.3e}")]
    DegenerateSpectrum { gap: f64, tolerance: f64 },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("implicitization failed for patch {patch}: {message}")]
    Implicitization { patch: String, message: String },
    #[error("unknown entity id: {0}")]
    UnknownEntity(String),
    #[error("normalization error: vanishing gradient (|grad| = {norm:.3e})")]
    VanishingGradient { norm: f64 },
    #[error("initial mesh has non-finite objective: {0}")]
    InvalidInitial(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
