//! Layer-wise contrastive metrics.
//!
//! Four curves summarize how strongly and how stably a model separates a
//! concept's two prompt classes at each layer:
//!
//! * separation `S(l)`: distance between class centroids over the pooled
//!   within-class spread, `gap / sqrt((tr Sigma_pos + tr Sigma_neg) / 2)`,
//!   with population covariances (divide by n);
//! * coherence `C(l)`: top-eigenvalue share `lambda_1 / sum(lambda)` of the
//!   pooled, mean-centered covariance, in `(0, 1]`;
//! * velocity `v(l)`: smoothed slope of separation,
//!   `(S(l+k) - S(l-k-1)) / (2k+1)` with indices clamped to the valid range,
//!   so endpoints replicate rather than shrink the window;
//! * directional stability `DS(l)`: dot product of consecutive layers' unit
//!   difference-of-means vectors, with `DS(0) = 1` by convention.
//!
//! Per-layer computation is independent across layers and runs through
//! rayon when the `parallel` feature (default) is enabled;
//! [`compute_layer_metrics_serial`] is the single-threaded reference path
//! and produces identical output.

use ndarray::{Array1, ArrayView2};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::activation_store::ActivationSet;
use crate::error::{CazError, Result};
use crate::linalg;

/// Denominators and vector norms below this are treated as zero.
const EPS: f64 = 1e-12;

/// The four metric curves plus per-layer direction vectors for one set.
#[derive(Debug, Clone)]
pub struct LayerMetrics {
    /// Fisher-style separation per layer; non-negative.
    pub separation: Vec<f64>,
    /// Top-eigenvalue variance share per layer; in `(0, 1]`.
    pub coherence: Vec<f64>,
    /// Smoothed separation slope per layer.
    pub velocity: Vec<f64>,
    /// Consecutive-layer direction agreement; `[-1, 1]`, first entry 1.
    pub directional_stability: Vec<f64>,
    /// Unit difference-of-means vector per layer.
    pub dom: Vec<Array1<f64>>,
    /// Smoothing half-width used for velocity.
    pub k: usize,
}

impl LayerMetrics {
    /// Number of layers covered.
    pub fn n_layers(&self) -> usize {
        self.separation.len()
    }

    /// Angular velocity `1 - |DS(l)|`: 0 when consecutive directions agree
    /// up to sign, approaching 1 as they decorrelate.
    pub fn angular_velocity(&self, layer: usize) -> f64 {
        1.0 - self.directional_stability[layer].abs()
    }

    /// Render the four curves as CSV with one row per layer.
    ///
    /// Values are printed with 12 decimal places, which keeps at least nine
    /// significant digits for every magnitude these metrics take.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,separation,coherence,velocity,directional_stability\n");
        for l in 0..self.n_layers() {
            out.push_str(&format!(
                "{},{:.12},{:.12},{:.12},{:.12}\n",
                l,
                self.separation[l],
                self.coherence[l],
                self.velocity[l],
                self.directional_stability[l]
            ));
        }
        out
    }
}

/// Smoothing half-width for a model depth: `max(1, floor(n_layers / 24))`.
/// Shallow models get 1, a 48-layer model 2, a 72-layer model 3.
pub fn smoothing_halfwidth(n_layers: usize) -> usize {
    (n_layers / 24).max(1)
}

/// Separation between the two classes of one layer.
///
/// Returns 0 when both the centroid gap and the pooled spread are
/// numerically zero; errors with [`CazError::DegenerateDispersion`] when
/// only the spread is.
pub fn separation(pos: &ArrayView2<f64>, neg: &ArrayView2<f64>) -> Result<f64> {
    check_layer_shapes(pos, neg)?;
    let mean_pos = linalg::column_means(pos);
    let mean_neg = linalg::column_means(neg);
    let gap = {
        let diff = &mean_pos - &mean_neg;
        linalg::norm(&diff.view())
    };
    let tr_pos = class_covariance_trace(pos, &mean_pos);
    let tr_neg = class_covariance_trace(neg, &mean_neg);
    let denom = (0.5 * (tr_pos + tr_neg)).sqrt();
    if denom < EPS {
        if gap < EPS {
            return Ok(0.0);
        }
        return Err(CazError::DegenerateDispersion { layer: None });
    }
    Ok(gap / denom)
}

fn class_covariance_trace(rows: &ArrayView2<f64>, mean: &Array1<f64>) -> f64 {
    let n = rows.nrows() as f64;
    let mut acc = 0.0;
    for row in rows.rows() {
        for (v, m) in row.iter().zip(mean.iter()) {
            let d = v - m;
            acc += d * d;
        }
    }
    acc / n
}

/// Coherence of one layer: `lambda_1 / sum(lambda)` of the pooled
/// mean-centered covariance of both classes together.
pub fn coherence(pos: &ArrayView2<f64>, neg: &ArrayView2<f64>) -> Result<f64> {
    check_layer_shapes(pos, neg)?;
    let (lambda1, total) = pooled_top_eigen(pos, neg)?;
    Ok((lambda1 / total).min(1.0))
}

/// Internal: dominant eigenvalue and trace of the pooled covariance.
fn pooled_top_eigen(pos: &ArrayView2<f64>, neg: &ArrayView2<f64>) -> Result<(f64, f64)> {
    let stacked = stack_rows(&[pos, neg]);
    let n = stacked.nrows() as f64;
    let centered = linalg::center_rows(&stacked.view());
    let total = linalg::scatter_trace(&centered.view(), n);
    if total < EPS {
        return Err(CazError::DegenerateDispersion { layer: None });
    }
    let (lambda1, _) = linalg::top_eigenpair(&centered.view(), n);
    Ok((lambda1, total))
}

pub(crate) fn stack_rows(parts: &[&ArrayView2<f64>]) -> ndarray::Array2<f64> {
    let dim = parts[0].ncols();
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = ndarray::Array2::zeros((rows, dim));
    let mut at = 0;
    for p in parts {
        for row in p.rows() {
            out.row_mut(at).assign(&row);
            at += 1;
        }
    }
    out
}

/// Unit vector from the negative-class centroid to the positive-class
/// centroid. Errors when the centroids coincide within floating precision.
pub fn dom_vector(pos: &ArrayView2<f64>, neg: &ArrayView2<f64>) -> Result<Array1<f64>> {
    check_layer_shapes(pos, neg)?;
    let diff = linalg::column_means(pos) - linalg::column_means(neg);
    let n = linalg::norm(&diff.view());
    if n < EPS {
        return Err(CazError::DegenerateDirection { layer: None });
    }
    Ok(diff / n)
}

/// Smoothed slope of `curve` with half-width `k`, endpoint-clamped.
///
/// `v(l) = (curve(min(l+k, L-1)) - curve(max(l-k-1, 0))) / (2k+1)`.
pub fn velocity(curve: &[f64], k: usize) -> Result<Vec<f64>> {
    if curve.len() < 3 {
        return Err(CazError::Validation {
            invariant: "curve",
            detail: format!("velocity needs at least 3 layers, got {}", curve.len()),
        });
    }
    if k < 1 {
        return Err(CazError::Validation {
            invariant: "k",
            detail: "smoothing half-width must be at least 1".into(),
        });
    }
    let last = curve.len() - 1;
    let span = (2 * k + 1) as f64;
    Ok((0..curve.len())
        .map(|l| {
            let hi = (l + k).min(last);
            let lo = l.saturating_sub(k + 1);
            (curve[hi] - curve[lo]) / span
        })
        .collect())
}

/// Consecutive-layer agreement of unit direction vectors; first entry 1.
pub fn directional_stability(doms: &[Array1<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(doms.len());
    for l in 0..doms.len() {
        if l == 0 {
            out.push(1.0);
        } else {
            out.push(linalg::unit_cosine(&doms[l].view(), &doms[l - 1].view()));
        }
    }
    out
}

fn check_layer_shapes(pos: &ArrayView2<f64>, neg: &ArrayView2<f64>) -> Result<()> {
    if pos.ncols() != neg.ncols() {
        return Err(CazError::DimensionMismatch(format!(
            "pos dim {} vs neg dim {}",
            pos.ncols(),
            neg.ncols()
        )));
    }
    if pos.nrows() < 2 || neg.nrows() < 2 {
        return Err(CazError::Validation {
            invariant: "rows",
            detail: format!(
                "need at least 2 rows per class, got {} pos / {} neg",
                pos.nrows(),
                neg.nrows()
            ),
        });
    }
    Ok(())
}

struct LayerStat {
    separation: f64,
    coherence: f64,
    dom: Array1<f64>,
}

fn layer_stat(set: &ActivationSet, layer: usize) -> Result<LayerStat> {
    let pos = set.pos_layer_f64(layer);
    let neg = set.neg_layer_f64(layer);
    let tag = |e: CazError| e.tag_layer(layer);
    let s = separation(&pos.view(), &neg.view()).map_err(tag)?;
    let c = coherence(&pos.view(), &neg.view()).map_err(tag)?;
    let d = dom_vector(&pos.view(), &neg.view()).map_err(tag)?;
    Ok(LayerStat {
        separation: s,
        coherence: c,
        dom: d,
    })
}

/// Compute all four curves for a set. `k` overrides the depth-derived
/// smoothing half-width when given.
///
/// Per-layer errors carry the offending layer index; when several layers are
/// degenerate the lowest index is reported.
pub fn compute_layer_metrics(set: &ActivationSet, k: Option<usize>) -> Result<LayerMetrics> {
    #[cfg(feature = "parallel")]
    {
        let stats: Vec<Result<LayerStat>> = (0..set.n_layers)
            .into_par_iter()
            .map(|l| layer_stat(set, l))
            .collect();
        assemble(set, k, stats)
    }
    #[cfg(not(feature = "parallel"))]
    {
        compute_layer_metrics_serial(set, k)
    }
}

/// Single-threaded reference path of [`compute_layer_metrics`]; always
/// available, identical output.
pub fn compute_layer_metrics_serial(set: &ActivationSet, k: Option<usize>) -> Result<LayerMetrics> {
    let stats: Vec<Result<LayerStat>> = (0..set.n_layers).map(|l| layer_stat(set, l)).collect();
    assemble(set, k, stats)
}

fn assemble(
    set: &ActivationSet,
    k: Option<usize>,
    stats: Vec<Result<LayerStat>>,
) -> Result<LayerMetrics> {
    // Report the lowest-layer failure deterministically.
    let mut resolved = Vec::with_capacity(stats.len());
    for s in stats {
        resolved.push(s?);
    }
    let k = k.unwrap_or_else(|| smoothing_halfwidth(set.n_layers));
    let separation: Vec<f64> = resolved.iter().map(|s| s.separation).collect();
    let coherence: Vec<f64> = resolved.iter().map(|s| s.coherence).collect();
    let dom: Vec<Array1<f64>> = resolved.into_iter().map(|s| s.dom).collect();
    let vel = velocity(&separation, k)?;
    let ds = directional_stability(&dom);
    Ok(LayerMetrics {
        separation,
        coherence,
        velocity: vel,
        directional_stability: ds,
        dom,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_store::ConceptMeta;
    use crate::rng::{NormalSource, SplitMix64};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn separation_of_identical_classes_is_zero() {
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let s = separation(&m.view(), &m.view()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn separation_matches_hand_computed_value() {
        // Centroids (0,1) and (2,1), gap 2; each class trace 1; denom 1.
        let pos = array![[0.0, 0.0], [0.0, 2.0]];
        let neg = array![[2.0, 0.0], [2.0, 2.0]];
        let s = separation(&pos.view(), &neg.view()).unwrap();
        assert!((s - 2.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn separation_uses_population_covariance() {
        // Two points at distance 2 around each centroid: population variance
        // over one axis is 1 per class even at n = 2 (divide by n, not n-1).
        let pos = array![[-1.0, 0.0], [1.0, 0.0]];
        let neg = array![[9.0, 0.0], [11.0, 0.0]];
        let s = separation(&pos.view(), &neg.view()).unwrap();
        assert!((s - 10.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn separation_is_scale_invariant() {
        let pos = array![[0.0, 0.0], [0.0, 2.0], [0.5, 1.0]];
        let neg = array![[2.0, 0.0], [2.0, 2.0], [2.5, 1.0]];
        let a = separation(&pos.view(), &neg.view()).unwrap();
        let pos3 = pos.mapv(|v| v * 3.0);
        let neg3 = neg.mapv(|v| v * 3.0);
        let b = separation(&pos3.view(), &neg3.view()).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn separation_degenerate_when_only_spread_vanishes() {
        let pos = array![[1.0, 1.0], [1.0, 1.0]];
        let neg = array![[4.0, 4.0], [4.0, 4.0]];
        assert!(matches!(
            separation(&pos.view(), &neg.view()),
            Err(CazError::DegenerateDispersion { .. })
        ));
        // Both gap and spread zero: defined as 0.
        let s = separation(&pos.view(), &pos.view()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn coherence_of_rank_one_cloud_is_one() {
        let pos = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let neg = array![[-1.0, -2.0], [-2.0, -4.0]];
        let c = coherence(&pos.view(), &neg.view()).unwrap();
        assert!((c - 1.0).abs() < 1e-10, "{c}");
    }

    #[test]
    fn coherence_of_isotropic_cloud_is_dimension_share() {
        // Pooled covariance is diag(1/2, 1/2): lambda1 / total = 1/2.
        let pos = array![[1.0, 0.0], [-1.0, 0.0]];
        let neg = array![[0.0, 1.0], [0.0, -1.0]];
        let c = coherence(&pos.view(), &neg.view()).unwrap();
        assert!((c - 0.5).abs() < 1e-12, "{c}");
    }

    #[test]
    fn coherence_errors_on_zero_variance() {
        let m = array![[2.0, 2.0], [2.0, 2.0]];
        assert!(matches!(
            coherence(&m.view(), &m.view()),
            Err(CazError::DegenerateDispersion { .. })
        ));
    }

    #[test]
    fn smoothing_halfwidth_follows_depth() {
        assert_eq!(smoothing_halfwidth(12), 1);
        assert_eq!(smoothing_halfwidth(23), 1);
        assert_eq!(smoothing_halfwidth(24), 1);
        assert_eq!(smoothing_halfwidth(47), 1);
        assert_eq!(smoothing_halfwidth(48), 2);
        assert_eq!(smoothing_halfwidth(72), 3);
    }

    #[test]
    fn velocity_of_constant_curve_is_zero() {
        let v = velocity(&[0.7; 9], 2).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn velocity_matches_hand_computed_window() {
        let v = velocity(&[0.0, 0.0, 1.0, 1.0, 0.0], 1).unwrap();
        assert!((v[2] - 1.0 / 3.0).abs() < 1e-15, "{}", v[2]);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn velocity_of_linear_curve_equals_slope_off_clamp() {
        let curve: Vec<f64> = (0..12).map(|l| 0.25 * l as f64).collect();
        for k in 1..=3usize {
            let v = velocity(&curve, k).unwrap();
            for l in (k + 1)..(curve.len() - k) {
                assert_eq!(v[l], 0.25, "k={k} l={l}");
            }
        }
    }

    #[test]
    fn velocity_window_telescopes_exactly() {
        let mut rng = SplitMix64::new(5);
        let curve: Vec<f64> = (0..20).map(|_| rng.next_f64()).collect();
        let k = 2;
        let v = velocity(&curve, k).unwrap();
        for l in (k + 1)..(curve.len() - k) {
            let span = (2 * k + 1) as f64;
            assert_eq!(v[l], (curve[l + k] - curve[l - k - 1]) / span);
        }
    }

    #[test]
    fn dom_vector_points_from_neg_to_pos() {
        let pos = array![[2.0, 0.0], [4.0, 0.0]];
        let neg = array![[-2.0, 0.0], [-4.0, 0.0]];
        let d = dom_vector(&pos.view(), &neg.view()).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!(d[1].abs() < 1e-12);
    }

    #[test]
    fn dom_vector_errors_when_centroids_coincide() {
        let pos = array![[1.0, 5.0], [3.0, 1.0]];
        let neg = array![[3.0, 5.0], [1.0, 1.0]];
        assert!(matches!(
            dom_vector(&pos.view(), &neg.view()),
            Err(CazError::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn directional_stability_convention_and_sign() {
        let e0 = array![1.0, 0.0];
        let e0n = array![-1.0, 0.0];
        let e1 = array![0.0, 1.0];
        let ds = directional_stability(&[e0.clone(), e0.clone(), e0n, e1]);
        assert_eq!(ds[0], 1.0);
        assert_eq!(ds[1], 1.0);
        assert_eq!(ds[2], -1.0);
        assert_eq!(ds[3], 0.0);
    }

    fn planted_set(seed: u64, n_layers: usize, n: usize, dim: usize, peak: usize) -> ActivationSet {
        // Triangle separation profile peaking at `peak`, constant direction.
        let mut noise = NormalSource::new(seed);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for l in 0..n_layers {
            let s = if l <= peak {
                l as f64 / peak as f64
            } else {
                (n_layers - 1 - l) as f64 / (n_layers - 1 - peak) as f64
            };
            let offset = s * (dim as f64).sqrt() / 2.0;
            let mut fill = |sign: f64| {
                Array2::from_shape_fn((n, dim), |(_, j)| {
                    let mean = if j == 0 { sign * offset } else { 0.0 };
                    (mean + noise.next_normal()) as f32
                })
            };
            pos.push(fill(1.0));
            neg.push(fill(-1.0));
        }
        ActivationSet::new(pos, neg, ConceptMeta::default()).unwrap()
    }

    #[test]
    fn planted_peak_shows_up_in_separation_curve() {
        let set = planted_set(11, 12, 220, 24, 7);
        let m = compute_layer_metrics(&set, None).unwrap();
        let argmax = m
            .separation
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 7);
        assert!((m.separation[7] - 1.0).abs() < 0.05, "{}", m.separation[7]);
        assert_eq!(m.k, 1);
        assert_eq!(m.velocity.len(), 12);
        assert_eq!(m.directional_stability[0], 1.0);
    }

    #[test]
    fn parallel_and_serial_paths_agree_exactly() {
        let set = planted_set(21, 8, 40, 12, 4);
        let a = compute_layer_metrics(&set, None).unwrap();
        let b = compute_layer_metrics_serial(&set, None).unwrap();
        assert_eq!(a.separation, b.separation);
        assert_eq!(a.coherence, b.coherence);
        assert_eq!(a.velocity, b.velocity);
        assert_eq!(a.directional_stability, b.directional_stability);
    }

    #[test]
    fn degenerate_layer_error_carries_its_index() {
        let mut set = planted_set(3, 6, 10, 4, 3);
        // Collapse both classes of layer 2 onto a single shared point.
        set.pos[2] = Array2::from_elem((10, 4), 1.5);
        set.neg[2] = Array2::from_elem((10, 4), 1.5);
        match compute_layer_metrics(&set, None) {
            Err(CazError::DegenerateDispersion { layer }) => assert_eq!(layer, Some(2)),
            other => panic!("expected layer-tagged dispersion error, got {other:?}"),
        }
    }

    #[test]
    fn csv_renders_header_and_one_row_per_layer() {
        let set = planted_set(9, 6, 12, 6, 3);
        let m = compute_layer_metrics(&set, None).unwrap();
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(
            lines[0],
            "layer,separation,coherence,velocity,directional_stability"
        );
        assert_eq!(lines.len(), 7);
        for (i, line) in lines[1..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            assert_eq!(fields[0], i.to_string());
            for f in &fields[1..] {
                f.parse::<f64>().unwrap();
            }
        }
    }

    prop_compose! {
        fn small_class()(rows in 2usize..6, dim in 2usize..5, seed in any::<u64>())
            -> (Array2<f64>, Array2<f64>) {
            let mut rng = SplitMix64::new(seed);
            let pos = Array2::from_shape_fn((rows, dim), |_| rng.next_f64() * 10.0 - 5.0);
            let neg = Array2::from_shape_fn((rows, dim), |_| rng.next_f64() * 10.0 - 5.0);
            (pos, neg)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn class_swap_preserves_separation_and_coherence((pos, neg) in small_class()) {
            let s1 = separation(&pos.view(), &neg.view()).unwrap();
            let s2 = separation(&neg.view(), &pos.view()).unwrap();
            prop_assert!((s1 - s2).abs() <= 1e-9 * s1.abs().max(1.0));
            let c1 = coherence(&pos.view(), &neg.view()).unwrap();
            let c2 = coherence(&neg.view(), &pos.view()).unwrap();
            prop_assert!((c1 - c2).abs() <= 1e-9);
        }

        #[test]
        fn translation_leaves_separation_and_coherence((pos, neg) in small_class(),
                                                       shift in -50.0f64..50.0) {
            let s1 = separation(&pos.view(), &neg.view()).unwrap();
            let c1 = coherence(&pos.view(), &neg.view()).unwrap();
            let pos_t = pos.mapv(|v| v + shift);
            let neg_t = neg.mapv(|v| v + shift);
            let s2 = separation(&pos_t.view(), &neg_t.view()).unwrap();
            let c2 = coherence(&pos_t.view(), &neg_t.view()).unwrap();
            prop_assert!((s1 - s2).abs() <= 1e-9 * s1.abs().max(1.0), "{s1} vs {s2}");
            prop_assert!((c1 - c2).abs() <= 1e-9, "{c1} vs {c2}");
        }

        #[test]
        fn class_swap_negates_dom((pos, neg) in small_class()) {
            if let (Ok(d1), Ok(d2)) = (
                dom_vector(&pos.view(), &neg.view()),
                dom_vector(&neg.view(), &pos.view()),
            ) {
                let sum = &d1 + &d2;
                prop_assert!(linalg::norm(&sum.view()) <= 1e-9);
            }
        }

        #[test]
        fn per_layer_sign_flips_leave_abs_stability(flips in proptest::collection::vec(any::<bool>(), 4..10)) {
            let mut rng = SplitMix64::new(77);
            let dim = 5;
            let doms: Vec<Array1<f64>> = flips.iter().map(|_| {
                let v = Array1::from_shape_fn(dim, |_| rng.next_f64() - 0.5);
                let n = linalg::norm(&v.view());
                v / n
            }).collect();
            let flipped: Vec<Array1<f64>> = doms.iter().zip(flips.iter()).map(|(d, &f)| {
                if f { d.mapv(|v| -v) } else { d.clone() }
            }).collect();
            let ds_a = directional_stability(&doms);
            let ds_b = directional_stability(&flipped);
            for (a, b) in ds_a.iter().zip(ds_b.iter()) {
                prop_assert!((a.abs() - b.abs()).abs() <= 1e-12);
            }
        }
    }
}
