//! `caz` — command-line pipeline over `caz-core`.
//!
//! Subcommands cover the full workflow: `synth` generates a planted
//! activation set, `metrics` turns a set into a per-layer CSV, `detect`
//! finds allocation regions (JSON profile, optional SVG report),
//! `extract` pulls a concept direction out of a detected region, and
//! `align` compares two models at matched depth fractions.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error,
//! 3 degenerate-computation error. Diagnostics go to stderr; output
//! files receive data only. All JSON output is key-sorted and
//! newline-terminated, and every subcommand is idempotent.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Deserialize;

use caz_core::activation_store::sorted_json;
use caz_core::analysis::{DEFAULT_FRACTIONS, DEFAULT_MIN_SEPARATION};
use caz_core::extraction::{
    extract_delta_pca, extract_handoff, extract_single_layer, extract_windowed_pca,
    DEFAULT_OMEGA_THRESHOLD,
};
use caz_core::synth::truth_path;
use caz_core::{
    compute_layer_metrics, depth_matched_alignment, detect_profile, detect_single_region,
    generate_planted, read_activation_set, write_activation_set, CalibrationPair, CazError,
    DetectionSettings, PlantSpec, Result,
};

#[derive(Parser)]
#[command(
    name = "caz",
    version,
    about = "Layer-wise concept allocation analysis for contrastive activation sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic activation set with planted ground truth.
    ///
    /// Writes the activation file plus `.meta.json` and `.truth.json`
    /// sidecars next to it.
    Synth {
        /// Plant specification (JSON).
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// Output activation file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Compute per-layer metrics and write them as CSV.
    Metrics {
        /// Input activation file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output CSV file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Velocity smoothing half-width override.
        #[arg(long, value_name = "N")]
        k: Option<usize>,
    },
    /// Detect allocation regions and write the profile as JSON.
    Detect {
        /// Input activation file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output profile JSON.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Velocity smoothing half-width override.
        #[arg(long, value_name = "N")]
        k: Option<usize>,
        /// Minimum peak prominence, as a fraction of the separation maximum.
        #[arg(long, value_name = "FRAC",
              default_value_t = DetectionSettings::default().prominence_floor_fraction)]
        prominence_floor: f64,
        /// Valleys shallower than this fraction of the separation maximum
        /// do not split regions.
        #[arg(long, value_name = "FRAC",
              default_value_t = DetectionSettings::default().valley_merge_fraction)]
        valley_merge: f64,
        /// Detector to run.
        #[arg(long, value_enum, default_value_t = Mode::Scored)]
        mode: Mode,
        /// Also write an SVG report of the three curves with region bands.
        #[arg(long, value_name = "FILE")]
        svg: Option<PathBuf>,
    },
    /// Extract a concept direction from a detected region.
    Extract {
        /// Input activation file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output direction JSON.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Extraction method.
        #[arg(long, value_enum, default_value_t = Method::Dom)]
        method: Method,
        /// Region index in the detected profile (default: the region with
        /// the highest peak separation).
        #[arg(long, value_name = "INDEX")]
        region: Option<usize>,
        /// Velocity smoothing half-width override.
        #[arg(long, value_name = "N")]
        k: Option<usize>,
        /// Minimum peak prominence, as a fraction of the separation maximum.
        #[arg(long, value_name = "FRAC",
              default_value_t = DetectionSettings::default().prominence_floor_fraction)]
        prominence_floor: f64,
        /// Valleys shallower than this fraction of the separation maximum
        /// do not split regions.
        #[arg(long, value_name = "FRAC",
              default_value_t = DetectionSettings::default().valley_merge_fraction)]
        valley_merge: f64,
        /// Angular-velocity threshold for the handoff search.
        #[arg(long, value_name = "OMEGA", default_value_t = DEFAULT_OMEGA_THRESHOLD)]
        omega_threshold: f64,
    },
    /// Align two models' concept directions at matched depth fractions.
    Align {
        /// Model A activation file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Model B activation file.
        #[arg(long = "in-b", value_name = "FILE")]
        input_b: PathBuf,
        /// Calibration directions for model A (JSON: a list of vectors, or
        /// of objects with a "vector" field — `extract` output works).
        #[arg(long, value_name = "FILE")]
        calib_a: PathBuf,
        /// Calibration directions for model B, paired row-for-row with
        /// `--calib-a`.
        #[arg(long, value_name = "FILE")]
        calib_b: PathBuf,
        /// Output report JSON.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Depth fractions to probe.
        #[arg(long, value_name = "F,F,..", value_delimiter = ',',
              default_values_t = DEFAULT_FRACTIONS)]
        depths: Vec<f64>,
        /// Minimum separation for a probe layer to count as valid.
        #[arg(long, value_name = "S", default_value_t = DEFAULT_MIN_SEPARATION)]
        min_separation: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Prominence-scored multi-region profile.
    Scored,
    /// Velocity-based single-region detector.
    Velocity,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Difference of means at the region peak.
    Dom,
    /// First principal component pooled over the region span.
    WindowedPca,
    /// First principal component of layer-to-layer activation deltas.
    DeltaPca,
    /// Difference of means at the post-peak handoff layer.
    Handoff,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {}", err.kind_name(), err);
            ExitCode::from(if err.is_data_error() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out } => run_synth(&spec, &out),
        Command::Metrics { input, out, k } => run_metrics(&input, &out, k),
        Command::Detect { input, out, k, prominence_floor, valley_merge, mode, svg } => {
            run_detect(&input, &out, k, prominence_floor, valley_merge, mode, svg.as_deref())
        }
        Command::Extract {
            input,
            out,
            method,
            region,
            k,
            prominence_floor,
            valley_merge,
            omega_threshold,
        } => run_extract(
            &input,
            &out,
            method,
            region,
            k,
            prominence_floor,
            valley_merge,
            omega_threshold,
        ),
        Command::Align { input, input_b, calib_a, calib_b, out, depths, min_separation } => {
            run_align(&input, &input_b, &calib_a, &calib_b, &out, &depths, min_separation)
        }
    }
}

fn run_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path)?;
    let spec: PlantSpec = serde_json::from_str(&text)?;
    let (set, truth) = generate_planted(&spec)?;
    write_activation_set(&set, out)?;
    fs::write(truth_path(out), sorted_json(&truth)?)?;
    Ok(())
}

fn run_metrics(input: &Path, out: &Path, k: Option<usize>) -> Result<()> {
    let set = read_activation_set(input)?;
    let metrics = compute_layer_metrics(&set, k)?;
    fs::write(out, metrics.to_csv())?;
    Ok(())
}

fn settings_from(prominence_floor: f64, valley_merge: f64) -> Result<DetectionSettings> {
    let settings = DetectionSettings {
        prominence_floor_fraction: prominence_floor,
        valley_merge_fraction: valley_merge,
        ..DetectionSettings::default()
    };
    settings.validate()?;
    Ok(settings)
}

fn run_detect(
    input: &Path,
    out: &Path,
    k: Option<usize>,
    prominence_floor: f64,
    valley_merge: f64,
    mode: Mode,
    svg_path: Option<&Path>,
) -> Result<()> {
    let set = read_activation_set(input)?;
    let metrics = compute_layer_metrics(&set, k)?;
    let settings = settings_from(prominence_floor, valley_merge)?;
    let (value, regions) = match mode {
        Mode::Scored => {
            let profile = detect_profile(&metrics, &settings)?;
            let mut value = serde_json::to_value(&profile)?;
            value
                .as_object_mut()
                .expect("profile serializes to an object")
                .insert("mode".into(), "scored".into());
            (value, profile.regions)
        }
        Mode::Velocity => {
            let region = detect_single_region(&metrics, &settings)?;
            let value = serde_json::json!({
                "mode": "velocity",
                "n_regions": 1,
                "peak_region_index": 0,
                "regions": [region],
                "settings": settings,
            });
            (value, vec![region])
        }
    };
    fs::write(out, sorted_json(&value)?)?;
    if let Some(path) = svg_path {
        fs::write(path, svg::render(&metrics, &regions))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_extract(
    input: &Path,
    out: &Path,
    method: Method,
    region_index: Option<usize>,
    k: Option<usize>,
    prominence_floor: f64,
    valley_merge: f64,
    omega_threshold: f64,
) -> Result<()> {
    let set = read_activation_set(input)?;
    let metrics = compute_layer_metrics(&set, k)?;
    let settings = settings_from(prominence_floor, valley_merge)?;
    let profile = detect_profile(&metrics, &settings)?;
    let index = region_index.unwrap_or(profile.peak_region_index);
    let region = profile.regions.get(index).ok_or_else(|| CazError::Validation {
        invariant: "region_index",
        detail: format!(
            "region {index} out of range: profile has {} region(s)",
            profile.regions.len()
        ),
    })?;
    let value = match method {
        Method::Dom => serde_json::to_value(&extract_single_layer(&set, region.peak_layer)?)?,
        Method::WindowedPca => serde_json::to_value(&extract_windowed_pca(&set, region)?)?,
        Method::DeltaPca => serde_json::to_value(&extract_delta_pca(&set, region)?)?,
        Method::Handoff => {
            let (direction, handoff) = extract_handoff(&set, &metrics, region, omega_threshold)?;
            let mut value = serde_json::to_value(&direction)?;
            value
                .as_object_mut()
                .expect("direction serializes to an object")
                .insert("handoff".into(), serde_json::to_value(&handoff)?);
            value
        }
    };
    fs::write(out, sorted_json(&value)?)?;
    Ok(())
}

/// One calibration entry: either a bare vector or an object carrying a
/// `vector` field (the shape `extract` writes).
#[derive(Deserialize)]
#[serde(untagged)]
enum DirectionEntry {
    Bare(Vec<f64>),
    Object { vector: Vec<f64> },
}

impl DirectionEntry {
    fn into_vector(self) -> Vec<f64> {
        match self {
            DirectionEntry::Bare(v) | DirectionEntry::Object { vector: v } => v,
        }
    }
}

/// A calibration file: a single direction or a list of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum DirectionFile {
    List(Vec<DirectionEntry>),
    Single(DirectionEntry),
}

fn read_direction_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let parsed: DirectionFile = serde_json::from_str(&text)?;
    let rows: Vec<Vec<f64>> = match parsed {
        DirectionFile::Single(entry) => vec![entry.into_vector()],
        DirectionFile::List(entries) => entries.into_iter().map(DirectionEntry::into_vector).collect(),
    };
    if rows.is_empty() {
        return Err(CazError::Format(format!(
            "{}: calibration file holds no directions",
            path.display()
        )));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(CazError::Format(format!(
            "{}: calibration directions must share one nonzero length",
            path.display()
        )));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let matrix = Array2::from_shape_vec((flat.len() / dim, dim), flat)
        .expect("row-major calibration layout matches its dimensions");
    Ok(matrix)
}

fn run_align(
    input: &Path,
    input_b: &Path,
    calib_a: &Path,
    calib_b: &Path,
    out: &Path,
    depths: &[f64],
    min_separation: f64,
) -> Result<()> {
    let set_a = read_activation_set(input)?;
    let set_b = read_activation_set(input_b)?;
    let directions_a = read_direction_matrix(calib_a)?;
    let directions_b = read_direction_matrix(calib_b)?;
    let calibration = CalibrationPair::new(directions_a, directions_b)?;
    let report = depth_matched_alignment(&set_a, &set_b, depths, &calibration, min_separation)?;
    fs::write(out, sorted_json(&report)?)?;
    Ok(())
}
