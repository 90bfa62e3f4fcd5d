//! Crate-wide error type.
//!
//! Every fallible operation returns [`CazError`]. Variants split into three
//! families that the CLI maps onto distinct exit codes: I/O and data-shape
//! problems (`Io`, `Format`, `Validation`, `Json`, `DimensionMismatch`),
//! and degenerate-computation outcomes where the inputs are well-formed but
//! the requested quantity does not exist (`DegenerateDispersion`,
//! `DegenerateDirection`, `NoAllocationDetected`, `NoHandoffFound`,
//! `SingleRegion`, `NoValidFractions`).

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CazError>;

fn at_layer(layer: &Option<usize>) -> String {
    match layer {
        Some(l) => format!(" at layer {l}"),
        None => String::new(),
    }
}

/// Unified error type for activation I/O, metrics, detection, extraction,
/// and alignment.
#[derive(Debug, Error)]
pub enum CazError {
    /// Underlying filesystem failure.
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed binary container: bad magic, unsupported version,
    /// truncated payload, or declared sizes inconsistent with byte length.
    #[error("malformed activation file: {0}")]
    Format(String),

    /// A structural invariant of an input value is violated. `invariant`
    /// names the first violated field.
    #[error("invalid {invariant}: {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },

    /// JSON (de)serialization failure for sidecars, specs, or reports.
    #[error("json failure: {0}")]
    Json(#[from] serde_json::Error),

    /// Two inputs that must share a shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A variance-normalized quantity was requested where total variance is
    /// numerically zero while the numerator is not.
    #[error("degenerate dispersion (near-zero variance){}", at_layer(layer))]
    DegenerateDispersion { layer: Option<usize> },

    /// A unit direction was requested from a near-zero difference vector.
    #[error("degenerate direction (class centroids coincide){}", at_layer(layer))]
    DegenerateDirection { layer: Option<usize> },

    /// Detection found no allocation signal: no separation peak survives, or
    /// velocity never rises above zero.
    #[error("no allocation detected: {0}")]
    NoAllocationDetected(String),

    /// Directional stability never settles below the threshold after the peak.
    #[error("no handoff found: angular velocity stays at or above {threshold} after layer {peak_layer}")]
    NoHandoffFound { peak_layer: usize, threshold: f64 },

    /// A cross-region comparison was requested on a single-region profile.
    #[error("single region: profile has {0} region(s); need at least 2")]
    SingleRegion(usize),

    /// Every probe depth fell below the separation threshold in at least one
    /// model.
    #[error("no valid fractions: all {0} probe depth(s) excluded by the separation threshold")]
    NoValidFractions(usize),
}

impl CazError {
    /// Stable machine-readable name for the error family, independent of the
    /// human-readable message. Used by the CLI error reporting.
    pub fn kind_name(&self) -> &'static str {
        match self {
            CazError::Io(_) => "IoError",
            CazError::Format(_) => "FormatError",
            CazError::Validation { .. } => "ValidationError",
            CazError::Json(_) => "JsonError",
            CazError::DimensionMismatch(_) => "DimensionMismatch",
            CazError::DegenerateDispersion { .. } => "DegenerateDispersion",
            CazError::DegenerateDirection { .. } => "DegenerateDirection",
            CazError::NoAllocationDetected(_) => "NoAllocationDetected",
            CazError::NoHandoffFound { .. } => "NoHandoffFound",
            CazError::SingleRegion(_) => "SingleRegion",
            CazError::NoValidFractions(_) => "NoValidFractions",
        }
    }

    /// Attach a layer index to a degenerate-computation error that was
    /// raised without one; other variants pass through unchanged.
    pub fn tag_layer(self, layer: usize) -> CazError {
        match self {
            CazError::DegenerateDispersion { layer: None } => {
                CazError::DegenerateDispersion { layer: Some(layer) }
            }
            CazError::DegenerateDirection { layer: None } => {
                CazError::DegenerateDirection { layer: Some(layer) }
            }
            other => other,
        }
    }

    /// True for errors caused by malformed or mismatched input data rather
    /// than by a degenerate computation on well-formed data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            CazError::Io(_)
                | CazError::Format(_)
                | CazError::Validation { .. }
                | CazError::Json(_)
                | CazError::DimensionMismatch(_)
        )
    }
}
