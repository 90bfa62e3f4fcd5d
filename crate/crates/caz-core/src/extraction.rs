//! Concept-direction extraction from a detected region, and the
//! directional-stability handoff search.
//!
//! Four ways to turn a region into a single unit vector:
//!
//! * **Single-layer DoM** — the centroid-difference direction at one layer,
//!   usually the region peak.
//! * **Windowed PCA** — first principal component of the mean-centered
//!   pooled stack of every row (both classes) from every layer in the
//!   region span.
//! * **Delta PCA** — first principal component of per-sample layer-to-layer
//!   differences `h_l − h_{l−1}` across the span, capturing what the region
//!   *writes* rather than what is present.
//! * **Handoff DoM** — DoM taken at the first post-peak layer where the
//!   angular velocity `ω(l) = 1 − |DS(l)|` falls under a threshold, i.e.
//!   where the direction has settled.
//!
//! PCA sign is ambiguous, so both PCA methods orient their output to have
//! non-negative dot product with the DoM at the region peak, making every
//! extraction deterministic.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::activation_store::ActivationSet;
use crate::detection::CazRegion;
use crate::error::{CazError, Result};
use crate::linalg;
use crate::metrics::{self, LayerMetrics};

/// Default angular-velocity threshold for the handoff search.
pub const DEFAULT_OMEGA_THRESHOLD: f64 = 0.05;

const EPS: f64 = 1e-12;

/// How a direction was extracted. The serialized tags match the CLI's
/// `--method` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionMethod {
    #[serde(rename = "dom")]
    SingleLayerDom,
    #[serde(rename = "windowed-pca")]
    WindowedPca,
    #[serde(rename = "delta-pca")]
    DeltaPca,
    #[serde(rename = "handoff")]
    HandoffDom,
}

/// A unit concept direction with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDirection {
    pub vector: Vec<f64>,
    pub method: ExtractionMethod,
    /// Inclusive layer range the vector was computed from.
    pub source_layers: (usize, usize),
    pub concept_name: String,
    pub model_name: String,
}

/// Where the direction settles after the peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandoffResult {
    pub handoff_layer: usize,
    pub omega_at_handoff: f64,
    pub threshold_used: f64,
}

fn check_layer(set: &ActivationSet, layer: usize) -> Result<()> {
    if layer >= set.n_layers {
        return Err(CazError::Validation {
            invariant: "layer_index",
            detail: format!("layer {layer} out of range for {} layers", set.n_layers),
        });
    }
    Ok(())
}

fn check_region(set: &ActivationSet, region: &CazRegion) -> Result<()> {
    if !(region.start_layer <= region.peak_layer && region.peak_layer <= region.end_layer) {
        return Err(CazError::Validation {
            invariant: "region_order",
            detail: format!(
                "region layers {}/{}/{} are not ordered",
                region.start_layer, region.peak_layer, region.end_layer
            ),
        });
    }
    check_layer(set, region.end_layer)
}

fn direction_from(set: &ActivationSet, vector: Array1<f64>, method: ExtractionMethod, source_layers: (usize, usize)) -> ConceptDirection {
    ConceptDirection {
        vector: vector.to_vec(),
        method,
        source_layers,
        concept_name: set.meta.concept_name.clone(),
        model_name: set.meta.model_name.clone(),
    }
}

/// DoM direction at one layer.
pub fn extract_single_layer(set: &ActivationSet, layer: usize) -> Result<ConceptDirection> {
    check_layer(set, layer)?;
    let dom = metrics::dom_vector(&set.pos_layer_f64(layer).view(), &set.neg_layer_f64(layer).view())
        .map_err(|e| e.tag_layer(layer))?;
    Ok(direction_from(set, dom, ExtractionMethod::SingleLayerDom, (layer, layer)))
}

/// Sign-oriented first principal component of a pre-stacked sample matrix.
fn oriented_pc1(set: &ActivationSet, stack: &ArrayView2<f64>, peak_layer: usize) -> Result<Array1<f64>> {
    let centered = linalg::center_rows(stack);
    let total = linalg::scatter_trace(&centered.view(), stack.nrows() as f64);
    if total < EPS {
        return Err(CazError::DegenerateDispersion { layer: None });
    }
    let (_, mut pc1) = linalg::top_eigenpair(&centered.view(), stack.nrows() as f64);
    let peak_dom = metrics::dom_vector(
        &set.pos_layer_f64(peak_layer).view(),
        &set.neg_layer_f64(peak_layer).view(),
    )
    .map_err(|e| e.tag_layer(peak_layer))?;
    if pc1.dot(&peak_dom) < 0.0 {
        pc1 *= -1.0;
    }
    Ok(pc1)
}

/// First principal component of all rows (both classes) pooled across the
/// region span, oriented along the peak DoM.
pub fn extract_windowed_pca(set: &ActivationSet, region: &CazRegion) -> Result<ConceptDirection> {
    check_region(set, region)?;
    let layers: Vec<Array2<f64>> = (region.start_layer..=region.end_layer)
        .flat_map(|l| [set.pos_layer_f64(l), set.neg_layer_f64(l)])
        .collect();
    let views: Vec<ArrayView2<f64>> = layers.iter().map(|m| m.view()).collect();
    let view_refs: Vec<&ArrayView2<f64>> = views.iter().collect();
    let stack = metrics::stack_rows(&view_refs);
    let pc1 = oriented_pc1(set, &stack.view(), region.peak_layer)?;
    Ok(direction_from(
        set,
        pc1,
        ExtractionMethod::WindowedPca,
        (region.start_layer, region.end_layer),
    ))
}

/// The pooled per-sample delta stack for a region: rows `h_l − h_{l−1}`
/// for every sample of both classes, for each l from `max(start, 1)` to
/// `end`. Exposed for shape testing.
pub(crate) fn delta_stack(set: &ActivationSet, region: &CazRegion) -> Result<Array2<f64>> {
    let lo = region.start_layer.max(1);
    if lo > region.end_layer {
        return Err(CazError::DegenerateDispersion { layer: None });
    }
    let n_rows = (set.n_pos() + set.n_neg()) * (region.end_layer - lo + 1);
    let mut stack = Array2::zeros((n_rows, set.dim));
    let mut row = 0;
    for l in lo..=region.end_layer {
        for (cur, prev) in [
            (set.pos_layer_f64(l), set.pos_layer_f64(l - 1)),
            (set.neg_layer_f64(l), set.neg_layer_f64(l - 1)),
        ] {
            let delta = &cur - &prev;
            for r in delta.rows() {
                stack.row_mut(row).assign(&r);
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, n_rows);
    Ok(stack)
}

/// First principal component of the layer-to-layer delta stack across the
/// region span, oriented along the peak DoM.
pub fn extract_delta_pca(set: &ActivationSet, region: &CazRegion) -> Result<ConceptDirection> {
    check_region(set, region)?;
    let stack = delta_stack(set, region)?;
    let pc1 = oriented_pc1(set, &stack.view(), region.peak_layer)?;
    Ok(direction_from(
        set,
        pc1,
        ExtractionMethod::DeltaPca,
        (region.start_layer, region.end_layer),
    ))
}

/// First post-peak layer where the angular velocity `1 − |DS(l)|` drops
/// under the threshold.
pub fn find_handoff(
    metrics: &LayerMetrics,
    region: &CazRegion,
    omega_threshold: f64,
) -> Result<HandoffResult> {
    let n = metrics.n_layers();
    if region.peak_layer + 1 >= n {
        return Err(CazError::Validation {
            invariant: "handoff_search_space",
            detail: format!(
                "peak layer {} leaves no post-peak layers to search",
                region.peak_layer
            ),
        });
    }
    for l in (region.peak_layer + 1)..n {
        let omega = metrics.angular_velocity(l);
        if omega < omega_threshold {
            return Ok(HandoffResult {
                handoff_layer: l,
                omega_at_handoff: omega,
                threshold_used: omega_threshold,
            });
        }
    }
    Err(CazError::NoHandoffFound {
        peak_layer: region.peak_layer,
        threshold: omega_threshold,
    })
}

/// Locate the handoff layer and extract DoM there.
pub fn extract_handoff(
    set: &ActivationSet,
    metrics: &LayerMetrics,
    region: &CazRegion,
    omega_threshold: f64,
) -> Result<(ConceptDirection, HandoffResult)> {
    check_region(set, region)?;
    let handoff = find_handoff(metrics, region, omega_threshold)?;
    let l = handoff.handoff_layer;
    let dom = metrics::dom_vector(&set.pos_layer_f64(l).view(), &set.neg_layer_f64(l).view())
        .map_err(|e| e.tag_layer(l))?;
    let dir = direction_from(set, dom, ExtractionMethod::HandoffDom, (l, l));
    Ok((dir, handoff))
}
