//! Contrastive activation container and its on-disk format.
//!
//! An [`ActivationSet`] holds one activation matrix per layer per class:
//! `pos` rows are activations of prompts exhibiting a concept, `neg` rows
//! the matched contrast prompts. Matrices are stored as `f32` (matching the
//! file payload bit for bit, which is what makes round-trips exact);
//! all downstream arithmetic widens to `f64`.
//!
//! # File layout (`.caza`, little-endian throughout)
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CAZA"
//! 4       4     format version, u32, currently 1
//! 8       4     n_layers, u32
//! 12      4     n_pos, u32
//! 16      4     n_neg, u32
//! 20      4     dim, u32
//! 24      1     dtype code, u8, 1 = f32 little-endian
//! 25      7     reserved, must be zero
//! 32      ...   payload: for each layer, pos rows row-major, then neg rows
//! ```
//!
//! The file length must equal `32 + n_layers * (n_pos + n_neg) * dim * 4`
//! exactly; anything else is rejected as malformed. A JSON sidecar with the
//! same stem and extension `.meta.json` carries the concept metadata and is
//! written alongside every activation file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CazError, Result};

const MAGIC: &[u8; 4] = b"CAZA";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F32_LE: u8 = 1;
const HEADER_LEN: usize = 32;

/// Description of where a dump came from. Stored in the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConceptMeta {
    /// Human-readable concept label, e.g. `"dangerous"`.
    pub concept_name: String,
    /// Model the activations were captured from.
    pub model_name: String,
    /// Token position convention of the capture, e.g. `"final-token"`.
    pub token_position: String,
    /// Number of contrastive prompt pairs behind the dump, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<u32>,
}

/// Per-layer contrastive activations for one concept on one model.
///
/// Construct through [`ActivationSet::new`] to get invariants checked; the
/// fields are public for direct assembly in tests, and every I/O entry point
/// re-validates.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    /// Number of layers; at least 3.
    pub n_layers: usize,
    /// Activation dimension; at least 1.
    pub dim: usize,
    /// One `n_pos x dim` matrix per layer.
    pub pos: Vec<Array2<f32>>,
    /// One `n_neg x dim` matrix per layer.
    pub neg: Vec<Array2<f32>>,
    /// Provenance metadata.
    pub meta: ConceptMeta,
}

impl ActivationSet {
    /// Build and validate a set. Layer counts and matrix shapes must agree
    /// and every value must be finite.
    pub fn new(pos: Vec<Array2<f32>>, neg: Vec<Array2<f32>>, meta: ConceptMeta) -> Result<Self> {
        let n_layers = pos.len();
        let dim = pos.first().map(|m| m.ncols()).unwrap_or(0);
        let set = ActivationSet {
            n_layers,
            dim,
            pos,
            neg,
            meta,
        };
        set.validate()?;
        Ok(set)
    }

    /// Rows per positive-class matrix.
    pub fn n_pos(&self) -> usize {
        self.pos.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// Rows per negative-class matrix.
    pub fn n_neg(&self) -> usize {
        self.neg.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// Positive-class activations at `layer`.
    pub fn pos_layer(&self, layer: usize) -> ArrayView2<'_, f32> {
        self.pos[layer].view()
    }

    /// Negative-class activations at `layer`.
    pub fn neg_layer(&self, layer: usize) -> ArrayView2<'_, f32> {
        self.neg[layer].view()
    }

    /// Positive-class activations at `layer`, widened for arithmetic.
    pub fn pos_layer_f64(&self, layer: usize) -> Array2<f64> {
        self.pos[layer].mapv(f64::from)
    }

    /// Negative-class activations at `layer`, widened for arithmetic.
    pub fn neg_layer_f64(&self, layer: usize) -> Array2<f64> {
        self.neg[layer].mapv(f64::from)
    }

    /// Check every structural invariant, reporting the first violated one.
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 3 {
            return Err(invalid(
                "n_layers",
                format!("need at least 3 layers, got {}", self.n_layers),
            ));
        }
        if self.pos.len() != self.n_layers || self.neg.len() != self.n_layers {
            return Err(invalid(
                "n_layers",
                format!(
                    "declared {} layers but found {} pos / {} neg matrices",
                    self.n_layers,
                    self.pos.len(),
                    self.neg.len()
                ),
            ));
        }
        if self.dim < 1 {
            return Err(invalid("dim", "activation dimension must be at least 1".into()));
        }
        let n_pos = self.n_pos();
        let n_neg = self.n_neg();
        if n_pos < 2 {
            return Err(invalid(
                "n_pos",
                format!("need at least 2 positive samples per layer, got {n_pos}"),
            ));
        }
        if n_neg < 2 {
            return Err(invalid(
                "n_neg",
                format!("need at least 2 negative samples per layer, got {n_neg}"),
            ));
        }
        for (l, m) in self.pos.iter().enumerate() {
            if m.nrows() != n_pos || m.ncols() != self.dim {
                return Err(invalid(
                    "shape",
                    format!(
                        "pos layer {l} is {}x{}, expected {}x{}",
                        m.nrows(),
                        m.ncols(),
                        n_pos,
                        self.dim
                    ),
                ));
            }
        }
        for (l, m) in self.neg.iter().enumerate() {
            if m.nrows() != n_neg || m.ncols() != self.dim {
                return Err(invalid(
                    "shape",
                    format!(
                        "neg layer {l} is {}x{}, expected {}x{}",
                        m.nrows(),
                        m.ncols(),
                        n_neg,
                        self.dim
                    ),
                ));
            }
        }
        for (l, m) in self.pos.iter().enumerate() {
            if let Some(v) = m.iter().find(|v| !v.is_finite()) {
                return Err(invalid(
                    "finite",
                    format!("non-finite value {v} in pos layer {l}"),
                ));
            }
        }
        for (l, m) in self.neg.iter().enumerate() {
            if let Some(v) = m.iter().find(|v| !v.is_finite()) {
                return Err(invalid(
                    "finite",
                    format!("non-finite value {v} in neg layer {l}"),
                ));
            }
        }
        if let Some(0) = self.meta.n_pairs {
            return Err(invalid("n_pairs", "n_pairs must be at least 1 when present".into()));
        }
        Ok(())
    }
}

fn invalid(invariant: &'static str, detail: String) -> CazError {
    CazError::Validation { invariant, detail }
}

/// Sidecar path for an activation file: same stem, extension `.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Write `set` to `path` in the binary layout above, plus the JSON sidecar.
///
/// Output is deterministic: the same set always produces byte-identical
/// files.
pub fn write_activation_set(set: &ActivationSet, path: &Path) -> Result<()> {
    set.validate()?;

    let n_layers = counts_as_u32(set.n_layers, "n_layers")?;
    let n_pos = counts_as_u32(set.n_pos(), "n_pos")?;
    let n_neg = counts_as_u32(set.n_neg(), "n_neg")?;
    let dim = counts_as_u32(set.dim, "dim")?;

    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&n_layers.to_le_bytes())?;
    w.write_all(&n_pos.to_le_bytes())?;
    w.write_all(&n_neg.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&[DTYPE_F32_LE])?;
    w.write_all(&[0u8; 7])?;
    for l in 0..set.n_layers {
        for m in [&set.pos[l], &set.neg[l]] {
            for v in m.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;

    let json = sorted_json(&set.meta)?;
    fs::write(meta_path(path), json)?;
    Ok(())
}

/// Read an activation set written by [`write_activation_set`].
///
/// Malformed headers and length mismatches are [`CazError::Format`];
/// well-formed files holding an invalid set (for example a NaN payload) are
/// [`CazError::Validation`]. A missing sidecar yields default metadata.
pub fn read_activation_set(path: &Path) -> Result<ActivationSet> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(CazError::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(CazError::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            MAGIC
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CazError::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n_layers = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n_pos = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n_neg = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    if bytes[24] != DTYPE_F32_LE {
        return Err(CazError::Format(format!(
            "unsupported dtype code {}, expected {DTYPE_F32_LE} (f32 little-endian)",
            bytes[24]
        )));
    }
    if bytes[25..32].iter().any(|&b| b != 0) {
        return Err(CazError::Format("reserved header bytes must be zero".into()));
    }

    let values_per_layer = (n_pos as u64 + n_neg as u64) * dim as u64;
    let expected = HEADER_LEN as u64 + n_layers as u64 * values_per_layer * 4;
    if bytes.len() as u64 != expected {
        return Err(CazError::Format(format!(
            "declared sizes require {expected} bytes but file has {}",
            bytes.len()
        )));
    }

    let mut offset = HEADER_LEN;
    let mut read_matrix = |rows: usize| -> Array2<f32> {
        let count = rows * dim;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f32::from_le_bytes(
                bytes[offset..offset + 4].try_into().unwrap(),
            ));
            offset += 4;
        }
        Array2::from_shape_vec((rows, dim), data).expect("length matches shape")
    };
    let mut pos = Vec::with_capacity(n_layers);
    let mut neg = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        pos.push(read_matrix(n_pos));
        neg.push(read_matrix(n_neg));
    }

    let side = meta_path(path);
    let meta = if side.exists() {
        serde_json::from_str(&fs::read_to_string(&side)?)?
    } else {
        ConceptMeta::default()
    };

    ActivationSet::new(pos, neg, meta)
}

fn counts_as_u32(v: usize, name: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(name, format!("{v} does not fit the u32 header field")))
}

/// Serialize any value as pretty JSON with sorted keys and a trailing
/// newline. All JSON this crate writes goes through here.
pub fn sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Value keeps maps in a BTreeMap, so re-encoding through it
    // sorts keys at every level.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
