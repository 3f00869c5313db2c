use thiserror::Error;

use crate::signal::Grid2D;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid {0} is too small (need at least 2x2)")]
    GridTooSmall(Grid2D),

    #[error("gaussian bandwidth must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("grid mismatch: expected {expected}, got {found}")]
    GridMismatch { expected: Grid2D, found: Grid2D },

    #[error("inverse transform left an imaginary residue of {residue:e} (bound {bound:e})")]
    ImaginaryResidue { residue: f64, bound: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite iterate in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("search window {0} lies entirely outside the image")]
    EmptyWindow(String),

    #[error("length mismatch: {0} predictions vs {1} ground-truth boxes")]
    LengthMismatch(usize, usize),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
