use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtError>;

#[derive(Debug, Error)]
pub enum CtError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("sinogram was generated by geometry {found:016x}, expected {expected:016x}")]
    GeometryMismatch { expected: u64, found: u64 },

    #[error("conjugate gradient diverged at iteration {iteration}: non-finite value")]
    Divergence { iteration: usize },

    #[error("system matrix too large: {rays} rays x {pixels} pixels exceeds {limit} entries")]
    SizeGuard { rays: usize, pixels: usize, limit: usize },

    #[error("sampling failed at step {step} (t = {t}): {source}")]
    SamplerStep {
        step: usize,
        t: usize,
        #[source]
        source: Box<CtError>,
    },

    #[error("external denoiser failed: {0}")]
    ExternalDenoiser(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> CtError {
    CtError::InvalidParameter(msg.into())
}
