//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or function pre-condition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid model, training, or scene configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A pixel coordinate fell outside the image rectangle.
    #[error("pixel ({u:.2}, {v:.2}) outside {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    /// Depth lookup hit the invalid-depth sentinel.
    #[error("no valid depth at pixel ({u}, {v})")]
    MissingDepth { u: usize, v: usize },

    /// Probe mask has too few foreground pixels for axis extraction.
    #[error("probe mask has {count} foreground pixels, need at least {min}")]
    MaskTooSmall { count: usize, min: usize },

    /// Mask PCA is isotropic; no dominant axis direction exists.
    #[error("ambiguous probe axis: eigenvalue ratio {ratio:.4} below {min:.2}")]
    AmbiguousAxis { ratio: f64, min: f64 },

    /// A ray never crosses the surface inside the scene bounds.
    #[error("ray does not intersect the surface")]
    NoIntersection,

    /// Scene generation could not find a valid probe pose.
    #[error("no valid probe pose after {attempts} attempts")]
    PoseRejected { attempts: usize },

    /// A file could not be parsed as the expected format.
    #[error("format error in {what}: {msg}")]
    Format { what: String, msg: String },

    /// Loaded data is internally inconsistent.
    #[error("validation failed for {field}: {msg}")]
    Validation { field: String, msg: String },

    /// Training hit a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step} (lr {lr:.3e}): loss is not finite")]
    Diverged { epoch: usize, step: usize, lr: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn format(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            msg: msg.into(),
        }
    }

    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
