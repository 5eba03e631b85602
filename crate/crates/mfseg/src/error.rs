//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MfError {
    /// Invalid grid dimensions (not square, not a power of two, too small).
    #[error("dimension error: {0}")]
    Dim(String),

    /// Scale range `[j1, j2]` incompatible with the input size.
    #[error("scale range error: {0}")]
    ScaleRange(String),

    /// Two inputs that must share a shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A label class owns no site at some scale.
    #[error("class {class} has no site at scale {scale}")]
    EmptyClass { class: usize, scale: u32 },

    /// Degenerate input (constant image, collapsed clustering, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Numerical failure (non-finite value, non-positive quantity where a
    /// positive one is required).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed configuration value.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MfError>;
