//! Seeded synthetic activation sets with planted ground truth, plus the
//! exhaustive reference implementations ("oracles") the test suites compare
//! against.
//!
//! The generator builds a per-layer target separation profile s(l) that is
//! piecewise linear between region anchors — zero at each region boundary,
//! the target value at each region peak — and draws each class from an
//! isotropic normal with means `±(s(l)·σ·√dim / 2)·u(l)`. With isotropic
//! per-class covariance σ²I, the population Fisher separation at layer l is
//! then exactly s(l):
//!
//! ```text
//! ‖μ₊ − μ₋‖ / sqrt(½(tr Σ₊ + tr Σ₋)) = s·σ·√dim / sqrt(dim·σ²) = s
//! ```
//!
//! The noise stream is fully pinned — SplitMix64 words from the plant seed,
//! normals via Box–Muller on consecutive words, consumed in payload order
//! (layer by layer, positive rows then negative rows, row-major) — so a
//! seed denotes the same data set in any implementation of this format.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::activation_store::{ActivationSet, ConceptMeta};
use crate::error::{CazError, Result};
use crate::rng::NormalSource;

const EPS: f64 = 1e-12;

/// One planted allocation region.
///
/// The direction is either given explicitly (`direction`, normalized on
/// use) or drawn from a dedicated seed (`direction_seed`); exactly one of
/// the two must be present. `rotation_stop_offset` optionally plants a
/// settling rotation: the region direction rotates by 90° over the first
/// `rotation_stop_offset` layers after the peak, then stays fixed, which
/// plants a directional-stability handoff at `peak + rotation_stop_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRegion {
    pub start: usize,
    pub peak: usize,
    pub end: usize,
    pub target_peak_separation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_stop_offset: Option<usize>,
}

/// Full recipe for one synthetic activation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_layers: usize,
    pub dim: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub regions: Vec<PlantedRegion>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PlantSpec {
    /// Check every generator precondition, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        let fail = |invariant: &'static str, detail: String| {
            Err(CazError::Validation { invariant, detail })
        };
        if self.n_layers < 3 {
            return fail("n_layers", format!("need at least 3 layers, got {}", self.n_layers));
        }
        if self.dim < 1 {
            return fail("dim", "need dim >= 1".into());
        }
        if self.n_pos < 2 || self.n_neg < 2 {
            return fail(
                "class_size",
                format!("need at least 2 rows per class, got {}/{}", self.n_pos, self.n_neg),
            );
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return fail("noise_sigma", format!("must be positive, got {}", self.noise_sigma));
        }
        let mut prev_end = 0usize;
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.start <= r.peak && r.peak <= r.end) {
                return fail(
                    "region_order",
                    format!("region {i} needs start <= peak <= end, got {}/{}/{}", r.start, r.peak, r.end),
                );
            }
            if r.end > self.n_layers - 1 {
                return fail(
                    "region_depth",
                    format!("region {i} ends at {} beyond last layer {}", r.end, self.n_layers - 1),
                );
            }
            if i > 0 && r.start < prev_end {
                return fail(
                    "region_overlap",
                    format!("region {i} starts at {} before previous end {prev_end}", r.start),
                );
            }
            prev_end = r.end;
            if !(r.target_peak_separation > 0.0) || !r.target_peak_separation.is_finite() {
                return fail(
                    "target_separation",
                    format!("region {i} target must be positive, got {}", r.target_peak_separation),
                );
            }
            match (&r.direction, r.direction_seed) {
                (Some(v), None) => {
                    if v.len() != self.dim {
                        return fail(
                            "direction_dim",
                            format!("region {i} direction has {} entries, dim is {}", v.len(), self.dim),
                        );
                    }
                    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !(norm > EPS) || !norm.is_finite() {
                        return fail("direction_norm", format!("region {i} direction is degenerate"));
                    }
                }
                (None, Some(_)) => {}
                (Some(_), Some(_)) => {
                    return fail(
                        "direction_choice",
                        format!("region {i} gives both an explicit direction and a direction_seed"),
                    );
                }
                (None, None) => {
                    return fail(
                        "direction_choice",
                        format!("region {i} needs a direction or a direction_seed"),
                    );
                }
            }
            if let Some(off) = r.rotation_stop_offset {
                if off < 1 {
                    return fail("rotation_stop_offset", format!("region {i} offset must be >= 1"));
                }
                if r.peak + off > self.n_layers - 1 {
                    return fail(
                        "rotation_stop_offset",
                        format!("region {i} rotation settles at {} beyond last layer", r.peak + off),
                    );
                }
            }
        }
        Ok(())
    }
}

/// Recorded truth for one planted region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRegion {
    pub start: usize,
    pub peak: usize,
    pub end: usize,
    pub target_peak_separation: f64,
    /// Unit direction at the peak layer.
    pub direction: Vec<f64>,
    /// Unit direction after the rotation settles, when a handoff is planted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settled_direction: Option<Vec<f64>>,
    /// Layer at which the rotation stops, when a handoff is planted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handoff_layer: Option<usize>,
}

/// What was actually planted: the exact population separation curve and the
/// resolved per-region geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Population Fisher separation per layer.
    pub separation: Vec<f64>,
    pub regions: Vec<TruthRegion>,
}

/// Sidecar path for ground truth written beside a CAZA file:
/// `foo.caza` → `foo.truth.json`.
pub fn truth_path(path: &Path) -> PathBuf {
    path.with_extension("truth.json")
}

/// The exact population separation curve a spec plants: piecewise linear
/// from (start, 0) up to (peak, target) and back down to (end, 0) within
/// each region, zero elsewhere. Where regions touch at a shared boundary
/// layer the larger planted value wins.
pub fn planted_separation_curve(spec: &PlantSpec) -> Vec<f64> {
    let mut s = vec![0.0; spec.n_layers];
    for r in &spec.regions {
        for l in r.start..=r.end {
            let v = region_ramp(r, l);
            if v > s[l] {
                s[l] = v;
            }
        }
    }
    s
}

fn region_ramp(r: &PlantedRegion, l: usize) -> f64 {
    debug_assert!(r.start <= l && l <= r.end);
    if l == r.peak {
        r.target_peak_separation
    } else if l < r.peak {
        r.target_peak_separation * (l - r.start) as f64 / (r.peak - r.start) as f64
    } else {
        r.target_peak_separation * (r.end - l) as f64 / (r.end - r.peak) as f64
    }
}

/// Unit vector with independent standard-normal coordinates, normalized.
pub fn random_unit_vector(dim: usize, source: &mut NormalSource) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(dim, |_| source.next_normal());
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > EPS {
            return v / n;
        }
    }
}

/// Haar-ish random orthogonal matrix: Gram-Schmidt (two passes, for
/// orthogonality at machine precision) on a seeded Gaussian matrix.
pub fn random_orthogonal(dim: usize, seed: u64) -> Array2<f64> {
    let mut source = NormalSource::new(seed);
    let mut q = Array2::zeros((dim, dim));
    for j in 0..dim {
        let mut col = random_unit_vector(dim, &mut source);
        for _pass in 0..2 {
            for k in 0..j {
                let proj: f64 = (0..dim).map(|i| q[[i, k]] * col[i]).sum();
                for i in 0..dim {
                    col[i] -= proj * q[[i, k]];
                }
            }
            let n = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > EPS {
                col /= n;
            } else {
                // Astronomically unlikely with Gaussian draws; restart the
                // column from fresh randomness.
                col = random_unit_vector(dim, &mut source);
            }
        }
        for i in 0..dim {
            q[[i, j]] = col[i];
        }
    }
    q
}

/// Unit vector orthogonal to `u`, drawn from `source` and Gram-Schmidt
/// projected.
fn random_orthogonal_to(u: &Array1<f64>, source: &mut NormalSource) -> Array1<f64> {
    loop {
        let mut w = random_unit_vector(u.len(), source);
        let proj = w.dot(u);
        w -= &(u * proj);
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > EPS {
            return w / n;
        }
    }
}

/// Resolved direction schedule for one region.
struct RegionDirections {
    /// Direction before and at the peak.
    base: Array1<f64>,
    /// Settled direction and stop layer when a rotation is planted.
    rotation: Option<(Array1<f64>, usize)>,
}

impl RegionDirections {
    fn at_layer(&self, peak: usize, l: usize) -> Array1<f64> {
        match &self.rotation {
            None => self.base.clone(),
            Some((settled, stop)) => {
                if l <= peak {
                    self.base.clone()
                } else if l >= *stop {
                    settled.clone()
                } else {
                    // Great-circle interpolation from base (at the peak) to
                    // settled (at the stop layer); both are unit and
                    // orthogonal, so the combination is unit by construction.
                    let t = (l - peak) as f64 / (stop - peak) as f64;
                    let angle = std::f64::consts::FRAC_PI_2 * t;
                    &self.base * angle.cos() + settled * angle.sin()
                }
            }
        }
    }
}

fn resolve_directions(spec: &PlantSpec, region_index: usize) -> RegionDirections {
    let r = &spec.regions[region_index];
    // Each region owns one auxiliary stream: seeded by its direction_seed
    // when given, otherwise derived from the plant seed and region index so
    // explicit-direction regions still rotate deterministically.
    let stream_seed = r.direction_seed.unwrap_or_else(|| {
        spec.seed ^ (region_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    });
    let mut stream = NormalSource::new(stream_seed);
    let base = match &r.direction {
        Some(v) => {
            let arr = Array1::from(v.clone());
            let n = arr.iter().map(|x| x * x).sum::<f64>().sqrt();
            arr / n
        }
        None => random_unit_vector(spec.dim, &mut stream),
    };
    let rotation = r.rotation_stop_offset.map(|off| {
        let settled = random_orthogonal_to(&base, &mut stream);
        (settled, r.peak + off)
    });
    RegionDirections { base, rotation }
}

/// Generate the activation set and ground truth a spec describes.
/// Deterministic: the same spec always yields bit-identical output.
pub fn generate_planted(spec: &PlantSpec) -> Result<(ActivationSet, GroundTruth)> {
    spec.validate()?;
    let separation = planted_separation_curve(spec);

    // Per-layer mean offset vector (half the centroid gap); regions are
    // resolved in order and a later region overwrites a shared boundary
    // layer only with a larger planted value, matching the curve rule.
    let mut planted_value = vec![0.0f64; spec.n_layers];
    let mut half_gap: Vec<Option<Array1<f64>>> = vec![None; spec.n_layers];
    let mut truth_regions = Vec::with_capacity(spec.regions.len());
    for (i, r) in spec.regions.iter().enumerate() {
        let dirs = resolve_directions(spec, i);
        for l in r.start..=r.end {
            let v = region_ramp(r, l);
            if v > planted_value[l] {
                planted_value[l] = v;
                let scale = v * spec.noise_sigma * (spec.dim as f64).sqrt() / 2.0;
                half_gap[l] = Some(dirs.at_layer(r.peak, l) * scale);
            }
        }
        truth_regions.push(TruthRegion {
            start: r.start,
            peak: r.peak,
            end: r.end,
            target_peak_separation: r.target_peak_separation,
            direction: dirs.base.to_vec(),
            settled_direction: dirs.rotation.as_ref().map(|(w, _)| w.to_vec()),
            handoff_layer: dirs.rotation.as_ref().map(|(_, stop)| *stop),
        });
    }

    let mut noise = NormalSource::new(spec.seed);
    let mut pos = Vec::with_capacity(spec.n_layers);
    let mut neg = Vec::with_capacity(spec.n_layers);
    for l in 0..spec.n_layers {
        let offset = half_gap[l].clone().unwrap_or_else(|| Array1::zeros(spec.dim));
        // Explicit row-major loops: the stream position of every draw is
        // part of the format's determinism contract.
        let mut draw_class = |rows: usize, sign: f64| -> Array2<f32> {
            let mut data = Vec::with_capacity(rows * spec.dim);
            for _row in 0..rows {
                for j in 0..spec.dim {
                    data.push((sign * offset[j] + spec.noise_sigma * noise.next_normal()) as f32);
                }
            }
            Array2::from_shape_vec((rows, spec.dim), data).expect("shape matches construction")
        };
        pos.push(draw_class(spec.n_pos, 1.0));
        neg.push(draw_class(spec.n_neg, -1.0));
    }

    let meta = ConceptMeta {
        concept_name: "planted".into(),
        model_name: "synthetic".into(),
        token_position: "final-token".into(),
        n_pairs: Some(spec.n_pos.min(spec.n_neg) as u32),
    };
    let set = ActivationSet::new(pos, neg, meta)?;
    let truth = GroundTruth {
        separation,
        regions: truth_regions,
    };
    Ok((set, truth))
}

/// Reference topographic prominence, written against the definition rather
/// than as a walking scan: find the nearest strictly higher point on each
/// side, take the minimum of the curve over the stretch between it and the
/// peak, and subtract the higher of the two side minima from the peak. A
/// side that does not exist (endpoint peak) contributes no base; a side
/// with no higher point uses the minimum all the way to the curve end.
pub fn oracle_prominence(curve: &[f64], peak: usize) -> f64 {
    let n = curve.len();
    let h = curve[peak];

    let min_over = |range: std::ops::Range<usize>| -> f64 {
        curve[range].iter().cloned().fold(f64::INFINITY, f64::min)
    };

    let left_base = if peak == 0 {
        None
    } else {
        let higher = (0..peak).rev().find(|&i| curve[i] > h);
        let from = higher.map_or(0, |i| i + 1);
        Some(min_over(from..peak))
    };
    let right_base = if peak == n - 1 {
        None
    } else {
        let higher = ((peak + 1)..n).find(|&i| curve[i] > h);
        let to = higher.unwrap_or(n);
        Some(min_over((peak + 1)..to))
    };

    match (left_base, right_base) {
        (Some(a), Some(b)) => h - a.max(b),
        (Some(a), None) => h - a,
        (None, Some(b)) => h - b,
        (None, None) => 0.0,
    }
}

/// Full eigendecomposition of a small symmetric matrix by cyclic two-sided
/// Jacobi rotations, returning eigenvalues in descending order and the
/// matching unit eigenvectors as columns.
///
/// Limited to `d ≤ 64` — this is a test reference, not a production
/// solver — and rejects non-symmetric input outright.
pub fn oracle_eigen(mat: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let d = mat.nrows();
    if mat.ncols() != d {
        return Err(CazError::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            d,
            mat.ncols()
        )));
    }
    if d == 0 || d > 64 {
        return Err(CazError::Validation {
            invariant: "oracle_dim",
            detail: format!("reference eigensolver handles 1..=64 dimensions, got {d}"),
        });
    }
    let scale = mat.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (mat[[i, j]] - mat[[j, i]]).abs() > 1e-9 * scale {
                return Err(CazError::Validation {
                    invariant: "symmetry",
                    detail: format!("entry ({i},{j}) differs from its transpose"),
                });
            }
        }
    }

    let mut a = mat.clone();
    let mut q: Array2<f64> = Array2::eye(d);
    let off = |a: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[[i, j]] * a[[i, j]];
                }
            }
        }
        s.sqrt()
    };
    let frob: f64 = mat.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-12 * frob.max(1.0);
    for _sweep in 0..100 {
        if off(&a) < target {
            break;
        }
        for p in 0..d {
            for qi in (p + 1)..d {
                let apq = a[[p, qi]];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[[qi, qi]] - a[[p, p]]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[[k, p]];
                    let akq = a[[k, qi]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, qi]] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[[p, k]];
                    let aqk = a[[qi, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[qi, k]] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let qkp = q[[k, p]];
                    let qkq = q[[k, qi]];
                    q[[k, p]] = c * qkp - s * qkq;
                    q[[k, qi]] = s * qkp + c * qkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap().then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((d, d));
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..d {
            vectors[[row, new_col]] = q[[row, old_col]];
        }
    }
    Ok((values, vectors))
}
