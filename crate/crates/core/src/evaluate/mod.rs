//! Scoring of reconstructed angiograms against the simulated ground truth.
//!
//! Everything here works on the fine (super-resolved) grid: binary masks are
//! compared pixel by pixel, counts stay integer until the final division, and
//! the undefined-denominator cases are reported as absent rather than folded
//! into 0 or 1.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::{Angiogram, Image2D};
use crate::vasculature::{rasterize_tracks, BlockGeometry, TrackMask, Trajectory};

/// Pixelwise confusion tally between a binary prediction and a binary truth.
/// The four cells always sum to the pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Precision, recall and dice derived from one confusion tally. A metric
/// whose denominator is zero is `None`: an empty prediction has no precision
/// to report, and downstream tables must exclude it rather than print 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice: Option<f64>,
    /// How the prediction was binarized, e.g. `"count>0"` or `"sigmoid>0.5"`.
    pub provenance: String,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Derive the three scores from integer counts. dice = 2TP / (2TP + FP + FN),
/// which equals the harmonic mean of precision and recall whenever TP > 0.
pub fn metrics(counts: &ConfusionCounts) -> MetricReport {
    MetricReport {
        counts: *counts,
        precision: ratio(counts.true_pos, counts.true_pos + counts.false_pos),
        recall: ratio(counts.true_pos, counts.true_pos + counts.false_neg),
        dice: ratio(
            2 * counts.true_pos,
            2 * counts.true_pos + counts.false_pos + counts.false_neg,
        ),
        provenance: String::new(),
    }
}

/// Exact pixelwise tally. Both masks must share one shape.
pub fn confusion_counts(prediction: &TrackMask, truth: &TrackMask) -> Result<ConfusionCounts> {
    if prediction.n_z != truth.n_z || prediction.n_x != truth.n_x {
        return Err(Error::shape(
            format!("{}x{}", truth.n_z, truth.n_x),
            format!("{}x{}", prediction.n_z, prediction.n_x),
        ));
    }
    let mut c = ConfusionCounts { true_pos: 0, false_pos: 0, false_neg: 0, true_neg: 0 };
    for (&p, &t) in prediction.as_bytes().iter().zip(truth.as_bytes()) {
        match (p != 0, t != 0) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// Tally and score in one step, stamping the binarization provenance.
pub fn score(prediction: &TrackMask, truth: &TrackMask, provenance: &str) -> Result<MetricReport> {
    let mut report = metrics(&confusion_counts(prediction, truth)?);
    report.provenance = provenance.to_string();
    Ok(report)
}

/// Rasterize every simulated trajectory of every block onto the fine grid,
/// accumulate the per-block masks, and binarize. Equals the pixelwise OR of
/// the per-block track masks, so adding blocks never clears a pixel.
pub fn ground_truth_angiogram(
    blocks: &[Vec<Trajectory>],
    geometry: &BlockGeometry,
    upscale: usize,
) -> Result<TrackMask> {
    let mut angio = Angiogram::zeros(geometry.n_z * upscale, geometry.n_x * upscale);
    for trajectories in blocks {
        angio.accumulate(&rasterize_tracks(trajectories, geometry, upscale)?)?;
    }
    Ok(angio.binarize())
}

/// Dice between the accumulation of the first `N_b` blocks and the full
/// reference, for each requested `N_b`. When the reference is the union of
/// the same masks the prediction never leaves it, so FP = 0 and the curve is
/// nondecreasing; the final checkpoint at the full set scores exactly 1.
///
/// Checkpoints must be nondecreasing (the accumulation is incremental) and
/// within the block count; the reference must be nonempty so the dice
/// denominator never vanishes.
pub fn network_filling_curve(
    masks: &[TrackMask],
    reference: &TrackMask,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if reference.count_ones() == 0 {
        return Err(Error::InvalidArgument(
            "network filling needs a nonempty reference".into(),
        ));
    }
    if let Some(w) = checkpoints.windows(2).find(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(format!(
            "checkpoints must be nondecreasing, got {} after {}",
            w[1], w[0]
        )));
    }
    if let Some(&over) = checkpoints.iter().find(|&&n| n > masks.len()) {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {over} exceeds the {} available blocks",
            masks.len()
        )));
    }
    let mut angio = Angiogram::zeros(reference.n_z, reference.n_x);
    let mut curve = Vec::with_capacity(checkpoints.len());
    for &n_b in checkpoints {
        while angio.n_blocks < n_b {
            angio.accumulate(&masks[angio.n_blocks])?;
        }
        let report = metrics(&confusion_counts(&angio.binarize(), reference)?);
        curve.push((n_b, report.dice.expect("nonempty reference")));
    }
    Ok(curve)
}

/// Side-by-side scores of the conventional and network reconstructions
/// against one reference, all on the same fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodComparison {
    pub expert: MetricReport,
    pub cnn: MetricReport,
}

/// Binarize both accumulated angiograms at count > 0 and score each against
/// the reference. Identical inputs produce identical reports.
pub fn compare_methods(
    expert: &Angiogram,
    cnn: &Angiogram,
    reference: &TrackMask,
) -> Result<MethodComparison> {
    Ok(MethodComparison {
        expert: score(&expert.binarize(), reference, "count>0")?,
        cnn: score(&cnn.binarize(), reference, "count>0")?,
    })
}

/// One row of the per-density comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub density_per_mm3: f64,
    pub method: String,
    pub report: MetricReport,
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "na".to_string(),
    }
}

/// Plain-text table, one `density,method,precision,recall,dice` row per
/// scored reconstruction. Undefined metrics are written as `na`.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = String::from("density,method,precision,recall,dice\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.density_per_mm3,
            row.method,
            fmt_metric(row.report.precision),
            fmt_metric(row.report.recall),
            fmt_metric(row.report.dice),
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One network-filling series: dice against the full reference after each
/// checkpointed number of accumulated blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FillingCurve {
    pub density_per_mm3: f64,
    pub points: Vec<(usize, f64)>,
}

fn check_shared_checkpoints(curves: &[FillingCurve]) -> Result<()> {
    let first = curves.first().ok_or_else(|| {
        Error::InvalidArgument("filling output needs at least one curve".into())
    })?;
    if first.points.is_empty() {
        return Err(Error::InvalidArgument("filling curve has no checkpoints".into()));
    }
    for c in &curves[1..] {
        let same = c.points.len() == first.points.len()
            && c.points.iter().zip(&first.points).all(|(a, b)| a.0 == b.0);
        if !same {
            return Err(Error::InvalidArgument(format!(
                "curves for densities {} and {} list different checkpoints",
                first.density_per_mm3, c.density_per_mm3
            )));
        }
    }
    Ok(())
}

/// One `n_blocks` column plus a dice column per density. Every curve must
/// share the same checkpoint sequence.
pub fn write_filling_csv(path: &Path, curves: &[FillingCurve]) -> Result<()> {
    check_shared_checkpoints(curves)?;
    let mut out = String::from("n_blocks");
    for c in curves {
        let _ = write!(out, ",dice_{}", c.density_per_mm3);
    }
    out.push('\n');
    for i in 0..curves[0].points.len() {
        let _ = write!(out, "{}", curves[0].points[i].0);
        for c in curves {
            let _ = write!(out, ",{:.6}", c.points[i].1);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const SVG_PALETTE: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Self-contained vector plot of dice versus accumulated blocks, one colored
/// polyline per density, y fixed to [0, 1].
pub fn write_filling_svg(path: &Path, curves: &[FillingCurve]) -> Result<()> {
    check_shared_checkpoints(curves)?;
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (64.0, 24.0, 24.0, 48.0);
    let n_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let px = |n: usize| left + n as f64 / n_max * (w - left - right);
    let py = |d: f64| top + (1.0 - d) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"13\">"
    );
    let _ = writeln!(
        svg,
        "  <rect x=\"{left}\" y=\"{top}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#333\"/>",
        w - left - right,
        h - top - bottom
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = py(tick);
        let _ = writeln!(
            svg,
            "  <line x1=\"{}\" y1=\"{y}\" x2=\"{left}\" y2=\"{y}\" stroke=\"#333\"/>",
            left - 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>",
            left - 9.0,
            y + 4.0
        );
    }
    for n in [0, n_max as usize] {
        let x = px(n);
        let _ = writeln!(
            svg,
            "  <line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#333\"/>",
            h - bottom,
            h - bottom + 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{n}</text>",
            h - bottom + 20.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">accumulated blocks</text>",
        left + (w - left - right) / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">\
         dice</text>",
        top + (h - top - bottom) / 2.0,
        top + (h - top - bottom) / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let pts: Vec<String> =
            c.points.iter().map(|&(n, d)| format!("{:.2},{:.2}", px(n), py(d))).collect();
        let _ = writeln!(
            svg,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" fill=\"{color}\">{} MB/mm3</text>",
            left + 12.0,
            top + 20.0 + 18.0 * i as f64,
            c.density_per_mm3
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Copy of one image row, for intensity-profile comparisons across a vessel.
pub fn line_profile(image: &Image2D, row: usize) -> Result<Vec<f64>> {
    if row >= image.n_z {
        return Err(Error::InvalidArgument(format!(
            "profile row {row} outside image of {} rows",
            image.n_z
        )));
    }
    Ok((0..image.n_x).map(|x| image.get(row, x)).collect())
}

/// Two superposed intensity profiles along one row, as `x,expert,cnn` CSV.
pub fn write_line_profiles(
    path: &Path,
    expert: &Image2D,
    cnn: &Image2D,
    row: usize,
) -> Result<()> {
    if expert.n_z != cnn.n_z || expert.n_x != cnn.n_x {
        return Err(Error::shape(
            format!("{}x{}", expert.n_z, expert.n_x),
            format!("{}x{}", cnn.n_z, cnn.n_x),
        ));
    }
    let (a, b) = (line_profile(expert, row)?, line_profile(cnn, row)?);
    let mut out = String::from("x,expert,cnn\n");
    for (x, (va, vb)) in a.iter().zip(&b).enumerate() {
        let _ = writeln!(out, "{x},{va},{vb}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Full width at half maximum of a 1D profile, in samples, with the two
/// half-maximum crossings placed by linear interpolation. `None` when the
/// profile has no positive peak or never falls below half maximum on one
/// side, in which case no width exists.
pub fn fwhm(profile: &[f64]) -> Option<f64> {
    let (peak, &max) = profile.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if max <= 0.0 || !max.is_finite() {
        return None;
    }
    let half = 0.5 * max;
    // First sample below half on each side; the crossing sits between it and
    // its peak-side neighbor, which is >= half by construction.
    let left = (0..peak).rev().find(|&i| profile[i] < half).map(|i| {
        i as f64 + (half - profile[i]) / (profile[i + 1] - profile[i])
    });
    let right = (peak + 1..profile.len()).find(|&i| profile[i] < half).map(|i| {
        (i - 1) as f64 + (profile[i - 1] - half) / (profile[i - 1] - profile[i])
    });
    Some(right? - left?)
}
