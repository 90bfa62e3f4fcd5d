//! Layer-wise concept-allocation analysis for contrastive activation dumps.
//!
//! Given per-layer activation matrices for a positive and a negative class
//! of prompts, this crate computes four depth profiles — Fisher-style
//! class separation, top-eigenvalue coherence, smoothed separation
//! velocity, and directional stability of the class-difference direction —
//! and turns them into detected allocation regions, extracted unit concept
//! directions, and cross-model depth-alignment statistics. A seeded
//! synthetic generator plants regions with known ground truth so every
//! detector and extractor can be validated against exact expectations.
//!
//! # Layout
//!
//! * [`activation_store`] — the `.caza` binary container and its JSON
//!   sidecar.
//! * [`metrics`] — the four per-layer curves and their assembly.
//! * [`detection`] — peak finding, prominence, and the two region
//!   detectors.
//! * [`extraction`] — DoM / windowed-PCA / delta-PCA / handoff direction
//!   extraction.
//! * [`analysis`] — cosine geometry, orthogonal Procrustes, depth-matched
//!   alignment.
//! * [`synth`] — planted-truth generation and the reference oracles.
//! * [`rng`] — the pinned deterministic random-number primitives.
//!
//! With the default `parallel` feature, per-layer metric computation fans
//! out over a rayon thread pool; disabling it gives a fully serial build
//! with identical results.

pub mod activation_store;
pub mod analysis;
pub mod detection;
pub mod error;
pub mod extraction;
mod linalg;
pub mod metrics;
pub mod rng;
pub mod synth;

pub use activation_store::{read_activation_set, write_activation_set, ActivationSet, ConceptMeta};
pub use analysis::{
    depth_matched_alignment, AlignmentReport, CalibrationPair, CosineMatrix, ProcrustesRotation,
};
pub use detection::{detect_profile, detect_single_region, CazProfile, CazRegion, DetectionSettings};
pub use error::{CazError, Result};
pub use extraction::{ConceptDirection, ExtractionMethod, HandoffResult};
pub use metrics::{compute_layer_metrics, compute_layer_metrics_serial, LayerMetrics};
pub use synth::{generate_planted, GroundTruth, PlantSpec, PlantedRegion};
