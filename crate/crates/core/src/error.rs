//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A shape is structurally invalid (zero extent, empty, too many dims).
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// A model or configuration parameter is out of its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An observation lies outside the support of the distribution.
    #[error("support violation: {0}")]
    SupportViolation(String),

    /// On-disk format violation (bad magic, truncated payload, dim overflow).
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Gamma denoising denominator collapsed at a specific pixel.
    #[error("gamma denoiser singular at pixel {index}: denominator {denominator:e}")]
    GammaSingular { index: usize, denominator: f64 },

    /// Requested generic path for a family it cannot serve.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A public operation would have produced NaN or infinity.
    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: &'static str, index: usize },

    /// Every grid point of a blind parameter search was singular.
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
}
