//! Direction geometry across regions and models: pairwise peak-direction
//! cosines, the full layer×layer cosine matrix, orthogonal Procrustes
//! fitting, and depth-matched cross-model alignment.
//!
//! The alignment protocol compares two same-dimension models at matched
//! proportional depths: map each depth fraction to a probe layer in each
//! model, keep only fractions where both models separate the concept
//! strongly enough, fit one orthogonal rotation from caller-supplied
//! calibration direction pairs, and then compare each rotated source
//! direction against the target direction at the *same* depth (matched)
//! versus the *other* valid depths (mismatched). A positive mean gap says
//! the models place the concept at corresponding depths.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::activation_store::ActivationSet;
use crate::detection::CazProfile;
use crate::error::{CazError, Result};
use crate::linalg;
use crate::metrics::{compute_layer_metrics, LayerMetrics};

/// Default minimum separation a probe layer needs in both models for its
/// depth fraction to count.
pub const DEFAULT_MIN_SEPARATION: f64 = 0.1;

/// Default probe depth fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.3, 0.5, 0.7];

/// Absolute cosine between the dominant directions at two region peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakPairCosine {
    /// Index of the shallower region in the profile.
    pub shallow_region: usize,
    /// Index of the deeper region in the profile.
    pub deep_region: usize,
    pub shallow_layer: usize,
    pub deep_layer: usize,
    pub abs_cosine: f64,
}

/// Layer-by-layer cosine structure of the dominant directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineMatrix {
    /// `values[i][j] = cos(dom(i), dom(j))`; exactly symmetric with a unit
    /// diagonal.
    pub values: Vec<Vec<f64>>,
}

/// Orthogonal map fitted between two direction sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesRotation {
    /// `d × d` orthogonal matrix `R` minimizing `‖source·R − target‖`.
    pub rotation: Array2<f64>,
    /// True when the cross matrix `sourceᵀ·target` is numerically
    /// rank-deficient; `R` is still orthogonal but not unique.
    pub rank_deficient: bool,
}

/// Paired calibration directions, one row per concept, used to fit the
/// cross-model rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPair {
    pub directions_a: Array2<f64>,
    pub directions_b: Array2<f64>,
}

impl CalibrationPair {
    pub fn new(directions_a: Array2<f64>, directions_b: Array2<f64>) -> Result<Self> {
        if directions_a.dim() != directions_b.dim() {
            return Err(CazError::DimensionMismatch(format!(
                "calibration sides have shapes {:?} and {:?}",
                directions_a.dim(),
                directions_b.dim()
            )));
        }
        if directions_a.nrows() == 0 || directions_a.ncols() == 0 {
            return Err(CazError::Validation {
                invariant: "calibration_shape",
                detail: "calibration needs at least one direction and one dimension".into(),
            });
        }
        Ok(CalibrationPair {
            directions_a,
            directions_b,
        })
    }
}

/// One valid probe depth in an [`AlignmentReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionAlignment {
    pub fraction: f64,
    pub layer_a: usize,
    pub layer_b: usize,
    /// Cosine between the rotated source direction and the target direction
    /// at the same depth.
    pub matched: f64,
    /// Cosines against the target directions at the other valid depths.
    pub mismatched: Vec<f64>,
}

/// Depth-matched alignment statistics for one model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub matched_mean: f64,
    /// Mean over all cross-depth cosines; 0.0 when only one fraction is
    /// valid and no cross-depth comparison exists.
    pub mismatched_mean: f64,
    /// `matched_mean − mismatched_mean`.
    pub delta: f64,
    pub n_valid: usize,
    pub n_excluded: usize,
    pub per_fraction: Vec<FractionAlignment>,
}

/// |cosine| between the dom vectors at every pair of region peaks,
/// shallow-to-deep.
pub fn peak_direction_cosines(
    metrics: &LayerMetrics,
    profile: &CazProfile,
) -> Result<Vec<PeakPairCosine>> {
    if profile.regions.len() < 2 {
        return Err(CazError::SingleRegion(profile.regions.len()));
    }
    let mut out = Vec::new();
    for i in 0..profile.regions.len() {
        for j in (i + 1)..profile.regions.len() {
            let li = profile.regions[i].peak_layer;
            let lj = profile.regions[j].peak_layer;
            let cos = linalg::unit_cosine(&metrics.dom[li].view(), &metrics.dom[lj].view());
            out.push(PeakPairCosine {
                shallow_region: i,
                deep_region: j,
                shallow_layer: li,
                deep_layer: lj,
                abs_cosine: cos.abs(),
            });
        }
    }
    Ok(out)
}

/// Full pairwise cosine matrix of the per-layer dominant directions.
pub fn layer_cosine_matrix(metrics: &LayerMetrics) -> Result<CosineMatrix> {
    let n = metrics.n_layers();
    for (l, dom) in metrics.dom.iter().enumerate() {
        let norm = dom.dot(dom).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(CazError::DegenerateDirection { layer: Some(l) });
        }
    }
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in (i + 1)..n {
            let c = linalg::unit_cosine(&metrics.dom[i].view(), &metrics.dom[j].view());
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(CosineMatrix { values })
}

/// Orthogonal `R` minimizing `‖source·R − target‖_F`, via the singular
/// value decomposition of `sourceᵀ·target`: `R = U·Vᵀ`. Reflections are
/// allowed (the determinant may be −1); full dimension, no projection.
pub fn procrustes_rotation(
    source: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
) -> Result<ProcrustesRotation> {
    if source.dim() != target.dim() {
        return Err(CazError::DimensionMismatch(format!(
            "direction sets have shapes {:?} and {:?}",
            source.dim(),
            target.dim()
        )));
    }
    if source.nrows() == 0 || source.ncols() == 0 {
        return Err(CazError::Validation {
            invariant: "procrustes_shape",
            detail: "need at least one row and one column".into(),
        });
    }
    let cross = source.t().dot(target);
    let svd = linalg::jacobi_svd(&cross.view());
    let rotation = svd.u.dot(&svd.v.t());
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    let sigma_min = svd.sigma.last().copied().unwrap_or(0.0);
    let rank_deficient = sigma_min <= sigma_max * 1e-12 || sigma_max == 0.0;
    Ok(ProcrustesRotation {
        rotation,
        rank_deficient,
    })
}

/// Probe layer for a depth fraction: `round(f × (L−1))`, half away from
/// zero.
pub fn probe_layer(fraction: f64, n_layers: usize) -> usize {
    (fraction * (n_layers - 1) as f64).round() as usize
}

/// Depth-matched alignment between two same-dimension models; see the
/// module docs for the protocol.
pub fn depth_matched_alignment(
    set_a: &ActivationSet,
    set_b: &ActivationSet,
    fractions: &[f64],
    calibration: &CalibrationPair,
    min_separation: f64,
) -> Result<AlignmentReport> {
    if set_a.dim != set_b.dim {
        return Err(CazError::DimensionMismatch(format!(
            "models have dimensions {} and {}",
            set_a.dim, set_b.dim
        )));
    }
    if calibration.directions_a.ncols() != set_a.dim {
        return Err(CazError::DimensionMismatch(format!(
            "calibration dimension {} does not match model dimension {}",
            calibration.directions_a.ncols(),
            set_a.dim
        )));
    }
    if fractions.is_empty() {
        return Err(CazError::Validation {
            invariant: "fractions",
            detail: "need at least one depth fraction".into(),
        });
    }
    for &f in fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(CazError::Validation {
                invariant: "fractions",
                detail: format!("depth fractions must lie in (0, 1), got {f}"),
            });
        }
    }

    let metrics_a = compute_layer_metrics(set_a, None)?;
    let metrics_b = compute_layer_metrics(set_b, None)?;
    let rotation = procrustes_rotation(
        &calibration.directions_a.view(),
        &calibration.directions_b.view(),
    )?
    .rotation;

    struct Probe {
        fraction: f64,
        layer_a: usize,
        layer_b: usize,
        mapped_a: Array1<f64>,
    }
    let mut valid = Vec::new();
    for &f in fractions {
        let la = probe_layer(f, set_a.n_layers);
        let lb = probe_layer(f, set_b.n_layers);
        if metrics_a.separation[la] >= min_separation && metrics_b.separation[lb] >= min_separation
        {
            valid.push(Probe {
                fraction: f,
                layer_a: la,
                layer_b: lb,
                mapped_a: metrics_a.dom[la].dot(&rotation),
            });
        }
    }
    if valid.is_empty() {
        return Err(CazError::NoValidFractions(fractions.len()));
    }

    let mut per_fraction = Vec::with_capacity(valid.len());
    let mut matched_sum = 0.0;
    let mut mismatched_sum = 0.0;
    let mut mismatched_count = 0usize;
    for (i, probe) in valid.iter().enumerate() {
        let matched = linalg::unit_cosine(
            &probe.mapped_a.view(),
            &metrics_b.dom[probe.layer_b].view(),
        );
        let mut mismatched = Vec::with_capacity(valid.len() - 1);
        for (j, other) in valid.iter().enumerate() {
            if j != i {
                mismatched.push(linalg::unit_cosine(
                    &probe.mapped_a.view(),
                    &metrics_b.dom[other.layer_b].view(),
                ));
            }
        }
        matched_sum += matched;
        mismatched_sum += mismatched.iter().sum::<f64>();
        mismatched_count += mismatched.len();
        per_fraction.push(FractionAlignment {
            fraction: probe.fraction,
            layer_a: probe.layer_a,
            layer_b: probe.layer_b,
            matched,
            mismatched,
        });
    }
    let matched_mean = matched_sum / valid.len() as f64;
    let mismatched_mean = if mismatched_count == 0 {
        0.0
    } else {
        mismatched_sum / mismatched_count as f64
    };
    Ok(AlignmentReport {
        matched_mean,
        mismatched_mean,
        delta: matched_mean - mismatched_mean,
        n_valid: valid.len(),
        n_excluded: fractions.len() - valid.len(),
        per_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{detect_profile, DetectionSettings};
    use crate::rng::NormalSource;
    use crate::synth::{generate_planted, random_orthogonal, PlantSpec, PlantedRegion};
    use ndarray::{array, Axis};

    fn axis_direction(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn bimodal_spec(dim: usize, dir_a: Vec<f64>, dir_b: Vec<f64>, seed: u64) -> PlantSpec {
        PlantSpec {
            n_layers: 24,
            dim,
            n_pos: 250,
            n_neg: 250,
            regions: vec![
                PlantedRegion {
                    start: 2,
                    peak: 6,
                    end: 11,
                    target_peak_separation: 1.0,
                    direction: Some(dir_a),
                    direction_seed: None,
                    rotation_stop_offset: None,
                },
                PlantedRegion {
                    start: 11,
                    peak: 16,
                    end: 21,
                    target_peak_separation: 1.0,
                    direction: Some(dir_b),
                    direction_seed: None,
                    rotation_stop_offset: None,
                },
            ],
            noise_sigma: 1.0,
            seed,
        }
    }

    #[test]
    fn orthogonal_sub_representations_have_low_peak_cosine() {
        let spec = bimodal_spec(64, axis_direction(64, 0), axis_direction(64, 1), 21);
        let (set, _) = generate_planted(&spec).unwrap();
        let m = compute_layer_metrics(&set, None).unwrap();
        let p = detect_profile(&m, &DetectionSettings::default()).unwrap();
        let pairs = peak_direction_cosines(&m, &p).unwrap();
        assert!(!pairs.is_empty());
        let main_pair = pairs
            .iter()
            .find(|c| c.shallow_layer.abs_diff(6) <= 1 && c.deep_layer.abs_diff(16) <= 1)
            .expect("planted peaks should be detected");
        assert!(main_pair.abs_cosine <= 0.2, "cosine {}", main_pair.abs_cosine);
    }

    #[test]
    fn shared_sub_representation_has_high_peak_cosine() {
        let d = axis_direction(64, 3);
        let spec = bimodal_spec(64, d.clone(), d, 22);
        let (set, _) = generate_planted(&spec).unwrap();
        let m = compute_layer_metrics(&set, None).unwrap();
        let p = detect_profile(&m, &DetectionSettings::default()).unwrap();
        let pairs = peak_direction_cosines(&m, &p).unwrap();
        let main_pair = pairs
            .iter()
            .find(|c| c.shallow_layer.abs_diff(6) <= 1 && c.deep_layer.abs_diff(16) <= 1)
            .expect("planted peaks should be detected");
        assert!(main_pair.abs_cosine >= 0.95, "cosine {}", main_pair.abs_cosine);
    }

    #[test]
    fn single_region_profile_cannot_be_compared() {
        let m = crate::detection::metrics_from_curve(&[0.0, 0.5, 1.0, 0.5, 0.0], 1);
        let p = detect_profile(&m, &DetectionSettings::default()).unwrap();
        assert!(matches!(
            peak_direction_cosines(&m, &p),
            Err(CazError::SingleRegion(1))
        ));
    }

    #[test]
    fn cosine_matrix_is_symmetric_with_unit_diagonal() {
        let m = crate::detection::metrics_from_curve(&[0.1, 0.2, 0.3, 0.4], 1);
        let cm = layer_cosine_matrix(&m).unwrap();
        for i in 0..4 {
            assert_eq!(cm.values[i][i], 1.0);
            for j in 0..4 {
                assert_eq!(cm.values[i][j], cm.values[j][i]);
                assert!(cm.values[i][j] >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn cosine_matrix_shows_planted_blocks() {
        let mut m = crate::detection::metrics_from_curve(&[0.5; 6], 1);
        let e0 = array![1.0, 0.0];
        let e1 = array![0.0, 1.0];
        m.dom = vec![
            e0.clone(),
            e0.clone(),
            e0.clone(),
            e1.clone(),
            e1.clone(),
            e1,
        ];
        let cm = layer_cosine_matrix(&m).unwrap();
        assert_eq!(cm.values[0][2], 1.0);
        assert_eq!(cm.values[3][5], 1.0);
        assert_eq!(cm.values[0][3], 0.0);
        assert_eq!(cm.values[2][3], 0.0);
    }

    #[test]
    fn cosine_matrix_rejects_non_unit_directions() {
        let mut m = crate::detection::metrics_from_curve(&[0.5; 3], 1);
        m.dom[2] = array![2.0, 0.0];
        assert!(matches!(
            layer_cosine_matrix(&m),
            Err(CazError::DegenerateDirection { layer: Some(2) })
        ));
    }

    #[test]
    fn procrustes_identity_on_equal_inputs() {
        let mut src = NormalSource::new(31);
        let a = Array2::from_shape_fn((8, 5), |_| src.next_normal());
        let r = procrustes_rotation(&a.view(), &a.view()).unwrap();
        assert!(!r.rank_deficient);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r.rotation[[i, j]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn procrustes_recovers_a_known_rotation() {
        let mut src = NormalSource::new(32);
        let a = Array2::from_shape_fn((12, 5), |_| src.next_normal());
        let q = random_orthogonal(5, 33);
        let b = a.dot(&q);
        let r = procrustes_rotation(&a.view(), &b.view()).unwrap();
        assert!(!r.rank_deficient);
        for i in 0..5 {
            for j in 0..5 {
                assert!(
                    (r.rotation[[i, j]] - q[[i, j]]).abs() < 1e-6,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn procrustes_output_is_orthogonal_even_when_rank_deficient() {
        let mut src = NormalSource::new(34);
        // Two rows in five dimensions: the cross matrix has rank ≤ 2.
        let a = Array2::from_shape_fn((2, 5), |_| src.next_normal());
        let b = Array2::from_shape_fn((2, 5), |_| src.next_normal());
        let r = procrustes_rotation(&a.view(), &b.view()).unwrap();
        assert!(r.rank_deficient);
        let rtr = r.rotation.t().dot(&r.rotation);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((rtr[[i, j]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn procrustes_fit_is_locally_optimal() {
        // No small rotation of the fitted R may reduce the residual.
        let mut src = NormalSource::new(35);
        let a = Array2::from_shape_fn((9, 6), |_| src.next_normal());
        let b = Array2::from_shape_fn((9, 6), |_| src.next_normal());
        let r = procrustes_rotation(&a.view(), &b.view()).unwrap().rotation;
        let residual = |rot: &Array2<f64>| -> f64 {
            let diff = &a.dot(rot) - &b;
            diff.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        let base = residual(&r);
        let eps: f64 = 1e-3;
        for i in 0..6 {
            for j in (i + 1)..6 {
                for sign in [-1.0, 1.0] {
                    let mut g: Array2<f64> = Array2::eye(6);
                    g[[i, i]] = (sign * eps).cos();
                    g[[j, j]] = (sign * eps).cos();
                    g[[i, j]] = -(sign * eps).sin();
                    g[[j, i]] = (sign * eps).sin();
                    let perturbed = residual(&r.dot(&g));
                    assert!(
                        perturbed >= base - 1e-9,
                        "perturbation ({i},{j},{sign}) improved the fit"
                    );
                }
            }
        }
    }

    #[test]
    fn probe_layers_round_half_up() {
        assert_eq!(probe_layer(0.3, 24), 7);
        assert_eq!(probe_layer(0.5, 24), 12);
        assert_eq!(probe_layer(0.7, 24), 16);
        assert_eq!(probe_layer(0.5, 13), 6);
    }

    fn three_region_spec(dim: usize, seed: u64, dir_seeds: [u64; 3]) -> PlantSpec {
        PlantSpec {
            n_layers: 24,
            dim,
            n_pos: 250,
            n_neg: 250,
            regions: vec![
                PlantedRegion {
                    start: 4,
                    peak: 7,
                    end: 10,
                    target_peak_separation: 1.2,
                    direction: None,
                    direction_seed: Some(dir_seeds[0]),
                    rotation_stop_offset: None,
                },
                PlantedRegion {
                    start: 10,
                    peak: 12,
                    end: 14,
                    target_peak_separation: 1.2,
                    direction: None,
                    direction_seed: Some(dir_seeds[1]),
                    rotation_stop_offset: None,
                },
                PlantedRegion {
                    start: 14,
                    peak: 16,
                    end: 20,
                    target_peak_separation: 1.2,
                    direction: None,
                    direction_seed: Some(dir_seeds[2]),
                    rotation_stop_offset: None,
                },
            ],
            noise_sigma: 1.0,
            seed,
        }
    }

    fn rotate_set(set: &ActivationSet, q: &Array2<f64>) -> ActivationSet {
        let map = |layers: &[Array2<f32>]| -> Vec<Array2<f32>> {
            layers
                .iter()
                .map(|m| {
                    let wide = m.mapv(|x| x as f64);
                    wide.dot(q).mapv(|x| x as f32)
                })
                .collect()
        };
        ActivationSet::new(map(&set.pos), map(&set.neg), set.meta.clone()).unwrap()
    }

    #[test]
    fn rotated_twin_aligns_at_matched_depths() {
        let spec = three_region_spec(48, 41, [101, 102, 103]);
        let (set_a, _) = generate_planted(&spec).unwrap();
        let q = random_orthogonal(48, 4242);
        let set_b = rotate_set(&set_a, &q);
        let calibration = CalibrationPair::new(Array2::eye(48), q.clone()).unwrap();
        let report = depth_matched_alignment(
            &set_a,
            &set_b,
            &DEFAULT_FRACTIONS,
            &calibration,
            DEFAULT_MIN_SEPARATION,
        )
        .unwrap();
        assert_eq!(report.n_valid, 3);
        assert_eq!(report.n_excluded, 0);
        assert!(report.matched_mean >= 0.95, "matched {}", report.matched_mean);
        assert!(report.delta > 0.0, "delta {}", report.delta);
        assert!((report.delta - (report.matched_mean - report.mismatched_mean)).abs() < 1e-15);
        for f in &report.per_fraction {
            assert_eq!(f.layer_a, f.layer_b);
            assert_eq!(f.mismatched.len(), 2);
        }
    }

    #[test]
    fn independently_planted_pair_still_prefers_matched_depths() {
        let spec_a = three_region_spec(48, 51, [111, 112, 113]);
        let spec_b = three_region_spec(48, 52, [211, 212, 213]);
        let (set_a, truth_a) = generate_planted(&spec_a).unwrap();
        let (set_b, truth_b) = generate_planted(&spec_b).unwrap();
        let stack = |truth: &crate::synth::GroundTruth| {
            let rows: Vec<Array1<f64>> = truth
                .regions
                .iter()
                .map(|r| Array1::from(r.direction.clone()))
                .collect();
            let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
            ndarray::concatenate(Axis(0), &views).unwrap()
        };
        let calibration = CalibrationPair::new(stack(&truth_a), stack(&truth_b)).unwrap();
        let report = depth_matched_alignment(
            &set_a,
            &set_b,
            &DEFAULT_FRACTIONS,
            &calibration,
            DEFAULT_MIN_SEPARATION,
        )
        .unwrap();
        assert_eq!(report.n_valid, 3);
        assert!(report.delta > 0.0, "delta {}", report.delta);
    }

    #[test]
    fn weak_separation_everywhere_yields_no_valid_fractions() {
        let spec = PlantSpec {
            n_layers: 12,
            dim: 48,
            n_pos: 100,
            n_neg: 100,
            regions: vec![],
            noise_sigma: 1.0,
            seed: 61,
        };
        let (set_a, _) = generate_planted(&spec).unwrap();
        let (set_b, _) = generate_planted(&PlantSpec { seed: 62, ..spec }).unwrap();
        let calibration = CalibrationPair::new(Array2::eye(48), Array2::eye(48)).unwrap();
        match depth_matched_alignment(&set_a, &set_b, &DEFAULT_FRACTIONS, &calibration, 0.5) {
            Err(CazError::NoValidFractions(3)) => {}
            other => panic!("expected NoValidFractions, got {other:?}"),
        }
    }

    #[test]
    fn single_valid_fraction_reports_zero_mismatched_mean() {
        // Only the middle region exists, so only the 0.5 probe survives.
        let mut spec = three_region_spec(48, 71, [301, 302, 303]);
        spec.regions.remove(2);
        spec.regions.remove(0);
        let (set_a, _) = generate_planted(&spec).unwrap();
        let (set_b, _) = generate_planted(&PlantSpec { seed: 72, ..spec.clone() }).unwrap();
        let calibration = CalibrationPair::new(Array2::eye(48), Array2::eye(48)).unwrap();
        // A gate of 0.3 sits far above the pure-noise baseline and far below
        // the planted 1.2, so exactly the middle probe survives.
        let report =
            depth_matched_alignment(&set_a, &set_b, &DEFAULT_FRACTIONS, &calibration, 0.3)
                .unwrap();
        assert_eq!(report.n_valid, 1);
        assert_eq!(report.n_excluded, 2);
        assert_eq!(report.mismatched_mean, 0.0);
        assert_eq!(report.per_fraction.len(), 1);
        assert!(report.per_fraction[0].mismatched.is_empty());
        assert_eq!(report.delta, report.matched_mean);
    }

    #[test]
    fn dimension_mismatch_is_rejected_up_front() {
        let spec_a = three_region_spec(16, 81, [1, 2, 3]);
        let spec_b = three_region_spec(24, 82, [4, 5, 6]);
        let (set_a, _) = generate_planted(&spec_a).unwrap();
        let (set_b, _) = generate_planted(&spec_b).unwrap();
        let calibration = CalibrationPair::new(Array2::eye(16), Array2::eye(16)).unwrap();
        assert!(matches!(
            depth_matched_alignment(&set_a, &set_b, &DEFAULT_FRACTIONS, &calibration, 0.1),
            Err(CazError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn report_json_matches_the_documented_shape() {
        let spec = three_region_spec(16, 91, [7, 8, 9]);
        let (set_a, _) = generate_planted(&spec).unwrap();
        let q = random_orthogonal(16, 92);
        let set_b = rotate_set(&set_a, &q);
        let calibration = CalibrationPair::new(Array2::eye(16), q).unwrap();
        let report = depth_matched_alignment(
            &set_a,
            &set_b,
            &DEFAULT_FRACTIONS,
            &calibration,
            DEFAULT_MIN_SEPARATION,
        )
        .unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in [
            "matched_mean",
            "mismatched_mean",
            "delta",
            "n_valid",
            "n_excluded",
            "per_fraction",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let pf = &json["per_fraction"][0];
        for key in ["fraction", "layer_a", "layer_b", "matched", "mismatched"] {
            assert!(pf.get(key).is_some(), "missing per_fraction.{key}");
        }
    }
}
