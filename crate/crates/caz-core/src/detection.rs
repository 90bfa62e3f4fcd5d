//! Allocation-zone detection over metric curves.
//!
//! Two detectors turn the separation curve into regions:
//!
//! * [`detect_profile`] (the default): find every local separation maximum,
//!   drop peaks whose topographic prominence falls under a floor fraction of
//!   the global maximum, merge peak pairs split by shallow valleys, and cut
//!   the depth at the saddle between each surviving pair. Consecutive
//!   regions share their saddle layer; the first region starts at layer 0
//!   and the last ends at the final layer.
//! * [`detect_single_region`]: a velocity-threshold detector for unimodal
//!   curves. Entry is the first sustained run of velocity at or above half
//!   the global maximum velocity, the peak is the separation argmax, and
//!   exit is the first sustained negative-velocity run at or past the peak.
//!
//! Each region carries a dimensionless score
//! `(prominence / mean separation) * (1 + peak coherence / mean coherence)
//! * sqrt(width / n_layers)`, bucketed into four strength grades.

use serde::{Deserialize, Serialize};

use crate::error::{CazError, Result};
use crate::metrics::LayerMetrics;

/// Scored-detector and velocity-detector knobs, all with documented
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSettings {
    /// Peaks with prominence below this fraction of the global separation
    /// maximum are discarded. Default 0.005.
    pub prominence_floor_fraction: f64,
    /// Adjacent peaks whose valley depth (lower peak minus saddle) is below
    /// this fraction of the global maximum merge into one region.
    /// Default 0.03.
    pub valley_merge_fraction: f64,
    /// Regions peaking at or before this layer are classified as embedding
    /// artifacts. Default 1.
    pub embedding_boundary_layer: usize,
    /// Consecutive layers a velocity condition must hold to count as
    /// sustained. Default 2.
    pub sustain_layers: usize,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        DetectionSettings {
            prominence_floor_fraction: 0.005,
            valley_merge_fraction: 0.03,
            embedding_boundary_layer: 1,
            sustain_layers: 2,
        }
    }
}

impl DetectionSettings {
    /// Check the settings invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.prominence_floor_fraction > 0.0 && self.prominence_floor_fraction < 1.0) {
            return Err(CazError::Validation {
                invariant: "prominence_floor_fraction",
                detail: format!("must lie in (0, 1), got {}", self.prominence_floor_fraction),
            });
        }
        if !(self.valley_merge_fraction > 0.0 && self.valley_merge_fraction < 1.0) {
            return Err(CazError::Validation {
                invariant: "valley_merge_fraction",
                detail: format!("must lie in (0, 1), got {}", self.valley_merge_fraction),
            });
        }
        if self.sustain_layers < 1 {
            return Err(CazError::Validation {
                invariant: "sustain_layers",
                detail: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Overall magnitude grade of a region score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Major,
    Strong,
    Moderate,
    Gentle,
}

/// Whether a region is an early embedding artifact or a genuine
/// mid-network allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Embedding,
    Active,
}

/// One detected allocation region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CazRegion {
    /// First layer of the region.
    #[serde(rename = "start")]
    pub start_layer: usize,
    /// Layer of maximum separation inside the region.
    #[serde(rename = "peak")]
    pub peak_layer: usize,
    /// Last layer of the region (inclusive).
    #[serde(rename = "end")]
    pub end_layer: usize,
    /// `end - start + 1`.
    pub width: usize,
    /// Separation at the peak layer.
    pub peak_separation: f64,
    /// Coherence at the peak layer.
    pub peak_coherence: f64,
    /// Topographic prominence of the peak on the full separation curve.
    pub prominence: f64,
    /// Dimensionless region score; see module docs.
    pub score: f64,
    /// Score grade.
    pub strength: Strength,
    /// Embedding artifact or active allocation.
    pub kind: RegionKind,
    /// Layers spent rising over layers spent falling:
    /// `(peak - start) / max(1, end - peak)`.
    pub rise_fall_asymmetry: f64,
}

/// A full-depth partition into regions, ordered by peak layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CazProfile {
    /// Regions ordered by strictly increasing peak layer.
    pub regions: Vec<CazRegion>,
    /// `regions.len()`.
    pub n_regions: usize,
    /// Index of the region with the highest peak separation.
    pub peak_region_index: usize,
    /// Settings the profile was detected with.
    pub settings: DetectionSettings,
}

/// Strict local maxima of a curve.
///
/// A peak must exceed its nearest distinct-valued neighbor on each side;
/// plateaus report their leftmost index; endpoints qualify when strictly
/// above their single distinct neighbor. A constant curve has no peaks.
pub fn find_peaks(curve: &[f64]) -> Vec<usize> {
    let n = curve.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && curve[j + 1] == curve[i] {
            j += 1;
        }
        let left_edge = i == 0;
        let right_edge = j == n - 1;
        let above_left = !left_edge && curve[i - 1] < curve[i];
        let above_right = !right_edge && curve[j + 1] < curve[i];
        let qualifies = match (left_edge, right_edge) {
            (true, true) => false,
            (true, false) => above_right,
            (false, true) => above_left,
            (false, false) => above_left && above_right,
        };
        if qualifies {
            peaks.push(i);
        }
        i = j + 1;
    }
    peaks
}

/// Topographic prominence of `curve[peak]`.
///
/// On each side, walk from the peak to the nearest strictly higher point
/// (or the array end) and take the minimum along the way; the prominence is
/// the peak height minus the higher of the two side minima. For an endpoint
/// peak the empty side is ignored, so a monotone curve's endpoint peak has
/// prominence down to the opposite end.
pub fn prominence(curve: &[f64], peak: usize) -> f64 {
    let peak_val = curve[peak];
    let mut left: Option<f64> = None;
    let mut i = peak;
    while i > 0 {
        i -= 1;
        if curve[i] > peak_val {
            break;
        }
        left = Some(left.map_or(curve[i], |m: f64| m.min(curve[i])));
    }
    let mut right: Option<f64> = None;
    let mut i = peak;
    while i + 1 < curve.len() {
        i += 1;
        if curve[i] > peak_val {
            break;
        }
        right = Some(right.map_or(curve[i], |m: f64| m.min(curve[i])));
    }
    let base = match (left, right) {
        (Some(a), Some(b)) => a.max(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => peak_val,
    };
    peak_val - base
}

/// Region score. Errors when the curve means are numerically zero.
pub fn caz_score(
    prominence: f64,
    mean_separation: f64,
    peak_coherence: f64,
    mean_coherence: f64,
    width: usize,
    n_layers: usize,
) -> Result<f64> {
    if mean_separation < 1e-12 || mean_coherence < 1e-12 {
        return Err(CazError::DegenerateDispersion { layer: None });
    }
    debug_assert!(width >= 1 && width <= n_layers);
    let width_factor = (width as f64 / n_layers as f64).sqrt();
    Ok((prominence / mean_separation) * (1.0 + peak_coherence / mean_coherence) * width_factor)
}

/// Grade a score. Boundaries are half-open upward: a score exactly at a
/// boundary takes the lower grade.
pub fn classify_strength(score: f64) -> Strength {
    if score > 0.5 {
        Strength::Major
    } else if score > 0.2 {
        Strength::Strong
    } else if score > 0.05 {
        Strength::Moderate
    } else {
        Strength::Gentle
    }
}

/// Embedding artifact when the peak sits at or before the embedding
/// boundary layer, active otherwise.
pub fn classify_kind(region: &CazRegion, settings: &DetectionSettings) -> RegionKind {
    kind_for_peak(region.peak_layer, settings)
}

fn kind_for_peak(peak_layer: usize, settings: &DetectionSettings) -> RegionKind {
    if peak_layer <= settings.embedding_boundary_layer {
        RegionKind::Embedding
    } else {
        RegionKind::Active
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn build_region(
    m: &LayerMetrics,
    start: usize,
    peak: usize,
    end: usize,
    settings: &DetectionSettings,
) -> Result<CazRegion> {
    let n_layers = m.n_layers();
    let width = end - start + 1;
    let prom = prominence(&m.separation, peak);
    let mean_sep = mean(&m.separation);
    let mean_coh = mean(&m.coherence);
    let score = caz_score(prom, mean_sep, m.coherence[peak], mean_coh, width, n_layers)?;
    Ok(CazRegion {
        start_layer: start,
        peak_layer: peak,
        end_layer: end,
        width,
        peak_separation: m.separation[peak],
        peak_coherence: m.coherence[peak],
        prominence: prom,
        score,
        strength: classify_strength(score),
        kind: kind_for_peak(peak, settings),
        rise_fall_asymmetry: (peak - start) as f64 / ((end - peak).max(1)) as f64,
    })
}

/// Leftmost index of the maximum value.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Velocity-threshold detector for unimodal separation curves.
///
/// Errors with [`CazError::NoAllocationDetected`] when velocity never rises
/// above zero. When no sustained entry run exists the region starts at
/// layer 0; when no sustained negative run follows the peak it ends at the
/// final layer.
pub fn detect_single_region(m: &LayerMetrics, settings: &DetectionSettings) -> Result<CazRegion> {
    settings.validate()?;
    let v = &m.velocity;
    let n = v.len();
    let max_v = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_v <= 0.0 {
        return Err(CazError::NoAllocationDetected(
            "velocity never rises above zero".into(),
        ));
    }
    let threshold = 0.5 * max_v;
    let sustain = settings.sustain_layers;

    let sustained_at = |pred: &dyn Fn(f64) -> bool, from: usize| -> Option<usize> {
        (from..n.saturating_sub(sustain - 1))
            .find(|&l| (l..l + sustain).all(|i| pred(v[i])))
    };

    let peak = argmax(&m.separation);
    let entry = sustained_at(&|x| x >= threshold, 0).unwrap_or(0);
    // A pathological curve can put the sustained rise after the argmax;
    // the region contract start <= peak wins in that case.
    let start = entry.min(peak);
    let end = sustained_at(&|x| x < 0.0, peak).unwrap_or(n - 1);
    build_region(m, start, peak, end, settings)
}

/// Scored multi-region detector; see the module docs for the pipeline.
pub fn detect_profile(m: &LayerMetrics, settings: &DetectionSettings) -> Result<CazProfile> {
    settings.validate()?;
    let s = &m.separation;
    let n = s.len();
    let max_s = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_s <= 0.0 {
        return Err(CazError::NoAllocationDetected(
            "separation curve has no positive values".into(),
        ));
    }

    let floor = settings.prominence_floor_fraction * max_s;
    let mut peaks: Vec<usize> = find_peaks(s)
        .into_iter()
        .filter(|&p| prominence(s, p) >= floor)
        .collect();
    if peaks.is_empty() {
        return Err(CazError::NoAllocationDetected(format!(
            "no separation peak clears the prominence floor {floor:.6}"
        )));
    }

    // Valley merging: re-scan left to right after every merge so the rule
    // sees the updated neighbor pairs.
    let merge_limit = settings.valley_merge_fraction * max_s;
    'merge: loop {
        for i in 0..peaks.len().saturating_sub(1) {
            let (a, b) = (peaks[i], peaks[i + 1]);
            let saddle = s[(a + 1)..b].iter().cloned().fold(f64::INFINITY, f64::min);
            let depth = s[a].min(s[b]) - saddle;
            if depth < merge_limit {
                // Keep the higher peak; on equal heights keep the left one.
                if s[a] >= s[b] {
                    peaks.remove(i + 1);
                } else {
                    peaks.remove(i);
                }
                continue 'merge;
            }
        }
        break;
    }

    // Saddle between each surviving pair: leftmost minimum strictly between.
    let mut bounds = vec![0usize];
    for w in peaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut best = a + 1;
        for i in (a + 1)..b {
            if s[i] < s[best] {
                best = i;
            }
        }
        bounds.push(best);
    }
    bounds.push(n - 1);

    let mut regions = Vec::with_capacity(peaks.len());
    for (i, &peak) in peaks.iter().enumerate() {
        regions.push(build_region(m, bounds[i], peak, bounds[i + 1], settings)?);
    }
    let peak_region_index = {
        let seps: Vec<f64> = regions.iter().map(|r| r.peak_separation).collect();
        argmax(&seps)
    };
    Ok(CazProfile {
        n_regions: regions.len(),
        peak_region_index,
        settings: *settings,
        regions,
    })
}

/// Test scaffold: metrics around a hand-built separation curve, with
/// constant coherence, constant direction, and velocity derived from the
/// curve. Lives here so sibling modules' tests can drive the detectors
/// with exact curves.
#[cfg(test)]
pub(crate) fn metrics_from_curve(curve: &[f64], k: usize) -> LayerMetrics {
    use ndarray::Array1;
    let dom: Vec<Array1<f64>> = curve.iter().map(|_| Array1::from(vec![1.0, 0.0])).collect();
    LayerMetrics {
        separation: curve.to_vec(),
        coherence: vec![0.5; curve.len()],
        velocity: crate::metrics::velocity(curve, k).unwrap(),
        directional_stability: vec![1.0; curve.len()],
        dom,
        k,
    }
}
