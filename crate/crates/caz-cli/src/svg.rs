//! Self-contained SVG report: separation, coherence, and velocity as
//! labeled polylines over shaded region bands with peak markers.
//!
//! The three curves live on very different scales, so each one is
//! normalized to its own range; the plot shows shape, not shared units.
//! Output is deterministic for a given input (fixed layout, fixed
//! two-decimal coordinate formatting), which keeps reruns byte-identical.

use caz_core::{CazRegion, LayerMetrics};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 64.0;
const MARGIN_BOTTOM: f64 = 48.0;

const BAND_FILL: &str = "#93b8e8";
const SEPARATION_COLOR: &str = "#1f6feb";
const COHERENCE_COLOR: &str = "#d97706";
const VELOCITY_COLOR: &str = "#059669";

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    values: &'a [f64],
}

/// Map a layer index to a plot x coordinate.
fn x_at(layer: usize, n_layers: usize) -> f64 {
    let span = (n_layers.saturating_sub(1)).max(1) as f64;
    MARGIN_LEFT + (layer as f64 / span) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

/// Map a value to a plot y coordinate after normalizing to `[lo, hi]`;
/// a flat series sits on the midline.
fn y_at(value: f64, lo: f64, hi: f64) -> f64 {
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let t = if hi > lo { (value - lo) / (hi - lo) } else { 0.5 };
    MARGIN_TOP + (1.0 - t) * plot_h
}

fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn polyline(series: &Series<'_>, n_layers: usize) -> String {
    let (lo, hi) = range(series.values);
    let points: Vec<String> = series
        .values
        .iter()
        .enumerate()
        .map(|(l, &v)| format!("{:.2},{:.2}", x_at(l, n_layers), y_at(v, lo, hi)))
        .collect();
    format!(
        "  <polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"><title>{}</title></polyline>\n",
        series.color,
        points.join(" "),
        series.label,
    )
}

/// Render the full report. `regions` may be empty (curves only).
pub fn render(metrics: &LayerMetrics, regions: &[CazRegion]) -> String {
    let n = metrics.n_layers();
    let plot_bottom = HEIGHT - MARGIN_BOTTOM;
    let series = [
        Series { label: "separation S(l)", color: SEPARATION_COLOR, values: &metrics.separation },
        Series { label: "coherence C(l)", color: COHERENCE_COLOR, values: &metrics.coherence },
        Series { label: "velocity v(l)", color: VELOCITY_COLOR, values: &metrics.velocity },
    ];

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    out.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{MARGIN_LEFT}\" y=\"24\" font-size=\"16\" fill=\"#1f2328\">layer metrics \
         ({n} layers, {} detected region{})</text>\n",
        regions.len(),
        if regions.len() == 1 { "" } else { "s" },
    ));
    out.push_str(&format!(
        "  <text x=\"{MARGIN_LEFT}\" y=\"42\" font-size=\"11\" fill=\"#57606a\">curves \
         normalized to their own range</text>\n"
    ));

    // Region bands and peak markers sit behind the curves.
    let sep_range = range(&metrics.separation);
    for region in regions {
        let x0 = x_at(region.start_layer, n);
        let x1 = x_at(region.end_layer, n);
        out.push_str(&format!(
            "  <rect x=\"{:.2}\" y=\"{MARGIN_TOP}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"{BAND_FILL}\" fill-opacity=\"0.25\"/>\n",
            x0,
            x1 - x0,
            plot_bottom - MARGIN_TOP,
        ));
        let px = x_at(region.peak_layer, n);
        let py = y_at(region.peak_separation, sep_range.0, sep_range.1);
        out.push_str(&format!(
            "  <line x1=\"{px:.2}\" y1=\"{MARGIN_TOP}\" x2=\"{px:.2}\" y2=\"{plot_bottom}\" \
             stroke=\"{SEPARATION_COLOR}\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n"
        ));
        out.push_str(&format!(
            "  <circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"4\" fill=\"{SEPARATION_COLOR}\"/>\n"
        ));
        out.push_str(&format!(
            "  <text x=\"{px:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#1f2328\" \
             text-anchor=\"middle\">peak {}</text>\n",
            MARGIN_TOP - 6.0,
            region.peak_layer,
        ));
    }

    // Axis baseline and layer ticks.
    out.push_str(&format!(
        "  <line x1=\"{MARGIN_LEFT}\" y1=\"{plot_bottom}\" x2=\"{:.2}\" y2=\"{plot_bottom}\" \
         stroke=\"#6e7781\" stroke-width=\"1\"/>\n",
        WIDTH - MARGIN_RIGHT,
    ));
    let stride = (n / 12).max(1);
    let mut tick = 0;
    while tick < n {
        let tx = x_at(tick, n);
        out.push_str(&format!(
            "  <line x1=\"{tx:.2}\" y1=\"{plot_bottom}\" x2=\"{tx:.2}\" y2=\"{:.2}\" \
             stroke=\"#6e7781\" stroke-width=\"1\"/>\n",
            plot_bottom + 4.0,
        ));
        out.push_str(&format!(
            "  <text x=\"{tx:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"#57606a\" \
             text-anchor=\"middle\">{tick}</text>\n",
            plot_bottom + 16.0,
        ));
        tick += stride;
    }
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#57606a\" \
         text-anchor=\"middle\">layer</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        plot_bottom + 32.0,
    ));

    for s in &series {
        out.push_str(&polyline(s, n));
    }

    // Legend along the top edge of the plot.
    let mut lx = MARGIN_LEFT;
    for s in &series {
        out.push_str(&format!(
            "  <line x1=\"{lx:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" \
             stroke-width=\"2\"/>\n",
            MARGIN_TOP - 10.0,
            lx + 18.0,
            MARGIN_TOP - 10.0,
            s.color,
        ));
        out.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#1f2328\">{}</text>\n",
            lx + 24.0,
            MARGIN_TOP - 6.0,
            s.label,
        ));
        lx += 200.0;
    }

    out.push_str("</svg>\n");
    out
}
