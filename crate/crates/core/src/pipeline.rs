//! Disk-level orchestration: each stage reads the previous stage's artifacts
//! from the output directory and writes its own. Stages are deterministic
//! functions of the run configuration, so rerunning one overwrites its
//! outputs with identical bytes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluate::{
    compare_methods, network_filling_curve, score, write_filling_csv, write_filling_svg,
    write_line_profiles, write_metrics_csv, FillingCurve, MetricRow,
};
use crate::expert::{accumulate_block, localize_block};
use crate::inference::{
    sliding_window_infer, write_angiogram_image, Angiogram, Image2D, WindowPlan,
};
use crate::neural::{
    chi_to_input, load_checkpoint, model_forward, save_checkpoint, threshold_binarize,
    train_two_phase, write_training_log, ModelConfig, ModelParams, TrainOutcome, TrainSample,
};
use crate::preprocess::{generate_dataset, read_manifest, read_record, DatasetRecord, Split, SplitMode};
use crate::vasculature::{
    generate_synthetic_graph, read_graph, write_graph, BlockGeometry, TrackMask,
};

/// Fixed layout of one run's output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Workspace {
        Workspace { root: root.into() }
    }

    pub fn graph_path(&self) -> PathBuf {
        self.root.join("graph_train.txt")
    }

    pub fn holdout_graph_path(&self) -> PathBuf {
        self.root.join("graph_holdout.txt")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn eval_dir(&self, density_per_mm3: f64) -> PathBuf {
        self.root.join(format!("eval_d{density_per_mm3}"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoints").join("model.ulmw")
    }

    pub fn phase1_checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoints").join("phase1.ulmw")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.root.join("train_log.txt")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// `<eval dir>/<method>_counts.txt`, `_angiogram.pgm`, `_masks.bin`.
    pub fn counts_path(&self, density: f64, method: &str) -> PathBuf {
        self.eval_dir(density).join(format!("{method}_counts.txt"))
    }

    pub fn angiogram_stem(&self, density: f64, method: &str) -> PathBuf {
        self.eval_dir(density).join(format!("{method}_angiogram"))
    }

    pub fn masks_path(&self, density: f64, method: &str) -> PathBuf {
        self.eval_dir(density).join(format!("{method}_masks.bin"))
    }
}

/// Smallest pitch-aligned frame covering every block footprint. All blocks
/// share one lattice, so the union is exact in pixels.
pub fn field_geometry(geoms: &[BlockGeometry]) -> Result<BlockGeometry> {
    let first = geoms
        .first()
        .ok_or_else(|| Error::InvalidArgument("field needs at least one block".into()))?;
    let pitch = first.pitch_um;
    if geoms.iter().any(|g| g.pitch_um != pitch) {
        return Err(Error::Config("blocks disagree on the grid pitch".into()));
    }
    let fold = |init: f64, f: &dyn Fn(&BlockGeometry) -> f64, min: bool| {
        geoms.iter().map(|g| f(g)).fold(init, |a, b| if min { a.min(b) } else { a.max(b) })
    };
    let min_z = fold(f64::INFINITY, &|g| g.origin_z_um, true);
    let min_x = fold(f64::INFINITY, &|g| g.origin_x_um, true);
    let max_z = fold(f64::NEG_INFINITY, &|g| g.origin_z_um + g.n_z as f64 * pitch, false);
    let max_x = fold(f64::NEG_INFINITY, &|g| g.origin_x_um + g.n_x as f64 * pitch, false);
    let cells = |span: f64| -> Result<usize> {
        let n = (span / pitch).round();
        if (span - n * pitch).abs() > 1e-6 * pitch {
            return Err(Error::Config(format!(
                "block span {span} um is not a whole number of {pitch} um pixels"
            )));
        }
        Ok(n as usize)
    };
    Ok(BlockGeometry {
        origin_z_um: min_z,
        origin_x_um: min_x,
        n_z: cells(max_z - min_z)?,
        n_x: cells(max_x - min_x)?,
        pitch_um: pitch,
    })
}

/// Fine-grid pixel offset of a block inside the field. The block must sit on
/// the field's lattice and inside its footprint.
pub fn fine_offset(
    field: &BlockGeometry,
    block: &BlockGeometry,
    upscale: usize,
) -> Result<(usize, usize)> {
    let cell = |delta: f64| -> Result<usize> {
        let n = (delta / field.pitch_um).round();
        if n < 0.0 || (delta - n * field.pitch_um).abs() > 1e-6 * field.pitch_um {
            return Err(Error::Config(format!(
                "block origin offset {delta} um is off the field lattice"
            )));
        }
        Ok(n as usize)
    };
    let (oz, ox) = (
        cell(block.origin_z_um - field.origin_z_um)?,
        cell(block.origin_x_um - field.origin_x_um)?,
    );
    if oz + block.n_z > field.n_z || ox + block.n_x > field.n_x {
        return Err(Error::Config("block footprint leaves the field".into()));
    }
    Ok((oz * upscale, ox * upscale))
}

const COUNTS_HEADER: &str = "ulmangio v1";

/// Plain-text accumulation map: a header, the dimensions and block count,
/// then one row of integer counts per fine-grid row.
pub fn write_angiogram_counts(path: &Path, angio: &Angiogram) -> Result<()> {
    let mut out = format!("{COUNTS_HEADER}\n{} {} {}\n", angio.n_z, angio.n_x, angio.n_blocks);
    for z in 0..angio.n_z {
        let row: Vec<String> =
            (0..angio.n_x).map(|x| angio.count(z, x).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_angiogram_counts(path: &Path) -> Result<Angiogram> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(path, reason);
    let mut lines = text.lines();
    if lines.next() != Some(COUNTS_HEADER) {
        return Err(bad("missing ulmangio header"));
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing dimension line"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("non-integer dimension")))
        .collect::<Result<_>>()?;
    let [n_z, n_x, n_blocks] = dims[..] else {
        return Err(bad("dimension line needs n_z n_x n_blocks"));
    };
    let mut counts = Vec::with_capacity(n_z * n_x);
    for _ in 0..n_z {
        let row = lines.next().ok_or_else(|| bad("fewer rows than n_z"))?;
        for tok in row.split_whitespace() {
            counts.push(tok.parse::<u32>().map_err(|_| bad("non-integer count"))?);
        }
    }
    if lines.next().is_some() {
        return Err(bad("trailing rows past n_z"));
    }
    Angiogram::from_counts(n_z, n_x, n_blocks, counts).map_err(|e| match e {
        Error::ShapeMismatch { expected, got } => bad(&format!("expected {expected}, got {got}")),
        other => other,
    })
}

const MASKS_MAGIC: &[u8; 4] = b"ULMM";
const MASKS_VERSION: u16 = 1;

/// Binary set of equally sized per-block masks with their fine-grid
/// placement: magic, version, count, mask sides, then per mask the offset
/// pair and the bit-packed rows.
pub fn write_mask_set(path: &Path, masks: &[(TrackMask, (usize, usize))]) -> Result<()> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("mask set needs at least one mask".into()))?;
    let (n_z, n_x) = (first.0.n_z, first.0.n_x);
    let mut out = Vec::new();
    out.extend_from_slice(MASKS_MAGIC);
    out.extend_from_slice(&MASKS_VERSION.to_le_bytes());
    out.extend_from_slice(&(masks.len() as u32).to_le_bytes());
    out.extend_from_slice(&(n_z as u32).to_le_bytes());
    out.extend_from_slice(&(n_x as u32).to_le_bytes());
    for (mask, (oz, ox)) in masks {
        if mask.n_z != n_z || mask.n_x != n_x {
            return Err(Error::shape(
                format!("{n_z}x{n_x}"),
                format!("{}x{}", mask.n_z, mask.n_x),
            ));
        }
        out.extend_from_slice(&(*oz as u32).to_le_bytes());
        out.extend_from_slice(&(*ox as u32).to_le_bytes());
        out.extend_from_slice(&mask.to_packed_rows());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_mask_set(path: &Path) -> Result<Vec<(TrackMask, (usize, usize))>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(path, reason);
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &bytes[at..end];
        at = end;
        Ok(s)
    };
    if take(4)? != MASKS_MAGIC {
        return Err(bad("missing ULMM magic"));
    }
    if u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) != MASKS_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut read_u32 =
        || -> Result<u32> { Ok(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"))) };
    let n_masks = read_u32()? as usize;
    let n_z = read_u32()? as usize;
    let n_x = read_u32()? as usize;
    let packed_len = n_z * n_x.div_ceil(8);
    let mut masks = Vec::with_capacity(n_masks);
    for _ in 0..n_masks {
        let oz = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let ox = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mask = TrackMask::from_packed_rows(n_z, n_x, take(packed_len)?)?;
        masks.push((mask, (oz, ox)));
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(masks)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Grow the training network and the held-out evaluation network.
pub fn run_genvasc(cfg: &RunConfig) -> Result<[PathBuf; 2]> {
    let ws = Workspace::new(&cfg.out_dir);
    ensure_dir(&ws.root)?;
    let train = generate_synthetic_graph(&cfg.graph_config())?;
    let holdout = generate_synthetic_graph(&cfg.holdout_graph_config())?;
    write_graph(&ws.graph_path(), &train)?;
    write_graph(&ws.holdout_graph_path(), &holdout)?;
    Ok([ws.graph_path(), ws.holdout_graph_path()])
}

/// Synthesize the training set from the training graph and one held-out test
/// set per evaluation density from the holdout graph.
pub fn run_dataset(cfg: &RunConfig) -> Result<()> {
    let ws = Workspace::new(&cfg.out_dir);
    let probe = cfg.probe_config();
    let seq = cfg.sequence_config();
    let graph = read_graph(&ws.graph_path())?;
    generate_dataset(
        &ws.dataset_dir(),
        &graph,
        &probe,
        &seq,
        &cfg.dataset_config(),
        SplitMode::TrainVal,
    )?;
    let holdout = read_graph(&ws.holdout_graph_path())?;
    for (i, &density) in cfg.evaluation.densities_per_mm3.iter().enumerate() {
        generate_dataset(
            &ws.eval_dir(density),
            &holdout,
            &probe,
            &seq,
            &cfg.eval_dataset_config(i)?,
            SplitMode::Test,
        )?;
    }
    Ok(())
}

fn load_records(dir: &Path) -> Result<Vec<(Split, DatasetRecord)>> {
    read_manifest(dir)?
        .into_par_iter()
        .map(|(split, name)| Ok((split, read_record(&dir.join(name))?)))
        .collect()
}

fn to_sample(record: DatasetRecord) -> TrainSample {
    TrainSample { input: chi_to_input(&record.chi), target: record.psi }
}

/// Two-phase optimization over the stored dataset. Writes the phase-1 and
/// final checkpoints plus the per-epoch log, and returns the outcome.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let ws = Workspace::new(&cfg.out_dir);
    let model_cfg = cfg.model_config();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (split, record) in load_records(&ws.dataset_dir())? {
        match split {
            Split::Train => train.push(to_sample(record)),
            Split::Validation => val.push(to_sample(record)),
            Split::Test => {}
        }
    }
    let outcome = train_two_phase(&train, &val, &model_cfg, &cfg.train_config())?;
    ensure_dir(&ws.checkpoint_path().parent().expect("checkpoint dir"))?;
    save_checkpoint(&ws.phase1_checkpoint_path(), &model_cfg, &outcome.phase1)?;
    save_checkpoint(&ws.checkpoint_path(), &model_cfg, &outcome.phase2)?;
    write_training_log(&ws.train_log_path(), &outcome.log)?;
    Ok(outcome)
}

/// One block through the network: directly when the block matches the
/// network input, through the sliding window when the field is larger.
pub fn infer_block_mask(
    params: &ModelParams<f32>,
    model_cfg: &ModelConfig,
    plan: &WindowPlan,
    record: &DatasetRecord,
) -> Result<TrackMask> {
    let g = record.chi.geom;
    if record.chi.n_t != model_cfg.n_t {
        return Err(Error::shape(
            format!("{} frames", model_cfg.n_t),
            format!("{} frames", record.chi.n_t),
        ));
    }
    if (g.n_z, g.n_x) == (model_cfg.n_z, model_cfg.n_x) {
        let (out, _) = model_forward(params, model_cfg, &chi_to_input(&record.chi))?;
        threshold_binarize(&out, model_cfg.threshold)
    } else {
        Ok(sliding_window_infer(&record.chi, params, model_cfg, plan)?.0)
    }
}

struct EvalSet {
    records: Vec<DatasetRecord>,
    field: BlockGeometry,
    /// Fine-grid offset of each record's block inside the field.
    offsets: Vec<(usize, usize)>,
}

fn load_eval_set(dir: &Path, upscale: usize) -> Result<EvalSet> {
    let records: Vec<DatasetRecord> =
        load_records(dir)?.into_iter().map(|(_, r)| r).collect();
    let geoms: Vec<BlockGeometry> = records.iter().map(|r| r.chi.geom).collect();
    let field = field_geometry(&geoms)?;
    let offsets = geoms
        .iter()
        .map(|g| fine_offset(&field, g, upscale))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSet { records, field, offsets })
}

fn fine_pitch_um(cfg: &RunConfig) -> f64 {
    crate::acoustics::GRID_PITCH_UM / cfg.dataset.upscale as f64
}

/// Reconstruct every evaluation density with the trained network: per-block
/// masks, the accumulated count map, and a rendered image.
pub fn run_infer(cfg: &RunConfig) -> Result<()> {
    let ws = Workspace::new(&cfg.out_dir);
    let (stored_cfg, params) = load_checkpoint(&ws.checkpoint_path())?;
    let model_cfg = cfg.model_config();
    if stored_cfg != model_cfg {
        return Err(Error::Config(
            "checkpoint was trained with a different model configuration".into(),
        ));
    }
    let plan = cfg.window_plan();
    let r = cfg.dataset.upscale as usize;
    for &density in &cfg.evaluation.densities_per_mm3 {
        let set = load_eval_set(&ws.eval_dir(density), r)?;
        let scored = cfg.evaluation.scored_blocks.min(set.records.len());
        let masks: Vec<(TrackMask, (usize, usize))> = set.records[..scored]
            .par_iter()
            .zip(&set.offsets[..scored])
            .map(|(rec, &at)| Ok((infer_block_mask(&params, &model_cfg, &plan, rec)?, at)))
            .collect::<Result<_>>()?;
        let mut angio = Angiogram::zeros(set.field.n_z * r, set.field.n_x * r);
        for (mask, (oz, ox)) in &masks {
            angio.accumulate_at(mask, *oz, *ox)?;
        }
        write_mask_set(&ws.masks_path(density, "cnn"), &masks)?;
        write_angiogram_counts(&ws.counts_path(density, "cnn"), &angio)?;
        write_angiogram_image(
            &ws.angiogram_stem(density, "cnn"),
            &angio,
            cfg.dataset.upscale,
            fine_pitch_um(cfg),
            true,
        )?;
    }
    Ok(())
}

/// Reconstruct every evaluation density with the conventional baseline.
pub fn run_expert(cfg: &RunConfig) -> Result<()> {
    let ws = Workspace::new(&cfg.out_dir);
    let r = cfg.dataset.upscale as usize;
    let threshold = cfg.inference.expert_threshold;
    for &density in &cfg.evaluation.densities_per_mm3 {
        let set = load_eval_set(&ws.eval_dir(density), r)?;
        let scored = cfg.evaluation.scored_blocks.min(set.records.len());
        let masks: Vec<(TrackMask, (usize, usize))> = set.records[..scored]
            .par_iter()
            .zip(&set.offsets[..scored])
            .map(|(rec, &at)| {
                let detections = localize_block(&rec.chi, threshold);
                let density_map = accumulate_block(&detections, &rec.chi.geom, r)?;
                Ok((density_map.binarize(), at))
            })
            .collect::<Result<_>>()?;
        let mut angio = Angiogram::zeros(set.field.n_z * r, set.field.n_x * r);
        for (mask, (oz, ox)) in &masks {
            angio.accumulate_at(mask, *oz, *ox)?;
        }
        write_mask_set(&ws.masks_path(density, "expert"), &masks)?;
        write_angiogram_counts(&ws.counts_path(density, "expert"), &angio)?;
        write_angiogram_image(
            &ws.angiogram_stem(density, "expert"),
            &angio,
            cfg.dataset.upscale,
            fine_pitch_um(cfg),
            true,
        )?;
    }
    Ok(())
}

/// Everything the scoring stage produces for one density.
#[derive(Debug, Clone)]
pub struct DensityReport {
    pub density_per_mm3: f64,
    pub truth: MetricRow,
    pub expert: MetricRow,
    pub cnn: MetricRow,
    pub filling: FillingCurve,
}

/// The scored sweep: the metric table rows and the filling curves, also
/// written under `reports/`.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub densities: Vec<DensityReport>,
}

/// Score both reconstructions per density against the full-set reference,
/// compute the truth-accumulation row and the network-filling curve, and
/// write the CSV table, the curve CSV/SVG, and the line profiles.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    let ws = Workspace::new(&cfg.out_dir);
    let r = cfg.dataset.upscale as usize;
    ensure_dir(&ws.reports_dir())?;
    let mut densities = Vec::new();
    for &density in &cfg.evaluation.densities_per_mm3 {
        let set = load_eval_set(&ws.eval_dir(density), r)?;
        let (fine_z, fine_x) = (set.field.n_z * r, set.field.n_x * r);

        // Per-block truth masks on the field grid, and the full-set union.
        let truth_fields: Vec<TrackMask> = set
            .records
            .iter()
            .zip(&set.offsets)
            .map(|(rec, &(oz, ox))| {
                let mut field = Angiogram::zeros(fine_z, fine_x);
                field.accumulate_at(&rec.psi, oz, ox)?;
                Ok(field.binarize())
            })
            .collect::<Result<_>>()?;
        let reference = crate::inference::accumulate_angiogram(&truth_fields)?.binarize();

        let scored = cfg.evaluation.scored_blocks.min(truth_fields.len());
        let truth_row = crate::inference::accumulate_angiogram(&truth_fields[..scored])?;

        let expert = read_angiogram_counts(&ws.counts_path(density, "expert"))?;
        let cnn = read_angiogram_counts(&ws.counts_path(density, "cnn"))?;
        for (name, angio) in [("expert", &expert), ("cnn", &cnn)] {
            if angio.n_z != fine_z || angio.n_x != fine_x {
                return Err(Error::Config(format!(
                    "{name} angiogram for density {density} is {}x{}, field is {fine_z}x{fine_x}",
                    angio.n_z, angio.n_x
                )));
            }
        }

        let comparison = compare_methods(&expert, &cnn, &reference)?;
        let row = |method: &str, report| MetricRow {
            density_per_mm3: density,
            method: method.to_string(),
            report,
        };
        let filling = FillingCurve {
            density_per_mm3: density,
            points: network_filling_curve(
                &truth_fields,
                &reference,
                &cfg.evaluation.checkpoints,
            )?,
        };

        let profile_row = cfg.evaluation.profile_row.unwrap_or(fine_z / 2);
        write_line_profiles(
            &ws.reports_dir().join(format!("profiles_d{density}.csv")),
            &Image2D::from_angiogram(&expert),
            &Image2D::from_angiogram(&cnn),
            profile_row,
        )?;

        densities.push(DensityReport {
            density_per_mm3: density,
            truth: row("truth", score(&truth_row.binarize(), &reference, "count>0")?),
            expert: row("expert", comparison.expert),
            cnn: row("cnn", comparison.cnn),
            filling,
        });
    }

    let rows: Vec<MetricRow> = densities
        .iter()
        .flat_map(|d| [d.truth.clone(), d.expert.clone(), d.cnn.clone()])
        .collect();
    write_metrics_csv(&ws.reports_dir().join("metrics.csv"), &rows)?;
    let curves: Vec<FillingCurve> = densities.iter().map(|d| d.filling.clone()).collect();
    write_filling_csv(&ws.reports_dir().join("filling.csv"), &curves)?;
    write_filling_svg(&ws.reports_dir().join("filling.svg"), &curves)?;
    Ok(EvalSummary { densities })
}

/// The six workflow stages the executable exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Genvasc,
    Dataset,
    Train,
    Infer,
    Expert,
    Evaluate,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Genvasc => "genvasc",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Expert => "expert",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Every path the stage writes, for cleanup when it fails midway.
    pub fn outputs(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        let ws = Workspace::new(&cfg.out_dir);
        let per_density = |method: &str| -> Vec<PathBuf> {
            cfg.evaluation
                .densities_per_mm3
                .iter()
                .flat_map(|&d| {
                    [
                        ws.masks_path(d, method),
                        ws.counts_path(d, method),
                        ws.angiogram_stem(d, method).with_extension("pgm"),
                        ws.angiogram_stem(d, method).with_extension("txt"),
                    ]
                })
                .collect()
        };
        match self {
            Stage::Genvasc => vec![ws.graph_path(), ws.holdout_graph_path()],
            Stage::Dataset => {
                let mut dirs = vec![ws.dataset_dir()];
                dirs.extend(cfg.evaluation.densities_per_mm3.iter().map(|&d| ws.eval_dir(d)));
                dirs
            }
            Stage::Train => vec![
                ws.phase1_checkpoint_path(),
                ws.checkpoint_path(),
                ws.train_log_path(),
            ],
            Stage::Infer => per_density("cnn"),
            Stage::Expert => per_density("expert"),
            Stage::Evaluate => vec![ws.reports_dir()],
        }
    }

    /// Delete whatever the stage may have written; a failed stage must not
    /// leave partial artifacts behind. Missing paths are fine.
    pub fn remove_outputs(&self, cfg: &RunConfig) {
        for path in self.outputs(cfg) {
            let _ = if path.is_dir() {
                std::fs::remove_dir_all(&path)
            } else {
                std::fs::remove_file(&path)
            };
        }
    }

    /// Run the stage and return a one-line summary.
    pub fn run(&self, cfg: &RunConfig) -> Result<String> {
        cfg.validate()?;
        match self {
            Stage::Genvasc => {
                let [train, holdout] = run_genvasc(cfg)?;
                Ok(format!("wrote {} and {}", train.display(), holdout.display()))
            }
            Stage::Dataset => {
                run_dataset(cfg)?;
                Ok(format!(
                    "wrote {} training blocks and {} test blocks for {} densities",
                    cfg.dataset.n_blocks,
                    cfg.evaluation.n_blocks,
                    cfg.evaluation.densities_per_mm3.len()
                ))
            }
            Stage::Train => {
                let outcome = run_train(cfg)?;
                let last = outcome.log.last().expect("at least one epoch");
                Ok(format!(
                    "final train loss {:.6}, val loss {}",
                    last.train_loss,
                    last.val_loss.map_or("-".to_string(), |v| format!("{v:.6}")),
                ))
            }
            Stage::Infer => {
                run_infer(cfg)?;
                Ok(format!(
                    "reconstructed {} densities with the network",
                    cfg.evaluation.densities_per_mm3.len()
                ))
            }
            Stage::Expert => {
                run_expert(cfg)?;
                Ok(format!(
                    "reconstructed {} densities with the baseline",
                    cfg.evaluation.densities_per_mm3.len()
                ))
            }
            Stage::Evaluate => {
                let summary = run_evaluate(cfg)?;
                let top = summary.densities.last().expect("at least one density");
                let fmt = |v: Option<f64>| v.map_or("na".to_string(), |v| format!("{v:.3}"));
                Ok(format!(
                    "at {} MB/mm3: cnn precision {} dice {}, expert precision {} dice {}",
                    top.density_per_mm3,
                    fmt(top.cnn.report.precision),
                    fmt(top.cnn.report.dice),
                    fmt(top.expert.report.precision),
                    fmt(top.expert.report.dice),
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(origin_z_um: f64, origin_x_um: f64, n_z: usize, n_x: usize) -> BlockGeometry {
        BlockGeometry { origin_z_um, origin_x_um, n_z, n_x, pitch_um: 25.0 }
    }

    #[test]
    fn field_geometry_spans_the_lattice_union() {
        let blocks = [geom(100.0, 50.0, 4, 4), geom(200.0, 150.0, 4, 4)];
        let field = field_geometry(&blocks).unwrap();
        assert_eq!(field.origin_z_um, 100.0);
        assert_eq!(field.origin_x_um, 50.0);
        assert_eq!((field.n_z, field.n_x), (8, 8));

        assert_eq!(fine_offset(&field, &blocks[0], 4).unwrap(), (0, 0));
        assert_eq!(fine_offset(&field, &blocks[1], 4).unwrap(), (16, 16));

        // A block off the shared lattice cannot be placed.
        let off = geom(112.5, 50.0, 4, 4);
        assert!(fine_offset(&field, &off, 4).is_err());
        // Outside the footprint.
        let outside = geom(300.0, 50.0, 4, 4);
        assert!(fine_offset(&field, &outside, 4).is_err());

        let mut odd_pitch = geom(0.0, 0.0, 4, 4);
        odd_pitch.pitch_um = 10.0;
        assert!(field_geometry(&[blocks[0], odd_pitch]).is_err());
        assert!(field_geometry(&[]).is_err());
    }

    #[test]
    fn angiogram_counts_round_trip() {
        let dir = std::env::temp_dir().join("ulm_pipeline_counts_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut mask = TrackMask::zeros(3, 5);
        mask.set(0, 0, true);
        mask.set(2, 4, true);
        let mut angio = Angiogram::zeros(3, 5);
        angio.accumulate(&mask).unwrap();
        angio.accumulate(&mask).unwrap();

        let path = dir.join("counts.txt");
        write_angiogram_counts(&path, &angio).unwrap();
        let back = read_angiogram_counts(&path).unwrap();
        assert_eq!(back, angio);
        assert_eq!(back.n_blocks, 2);
        assert_eq!(back.count(2, 4), 2);

        std::fs::write(&path, "ulmangio v2\n1 1 1\n0\n").unwrap();
        assert!(read_angiogram_counts(&path).is_err());
        std::fs::write(&path, "ulmangio v1\n2 2 1\n0 0\n").unwrap();
        assert!(read_angiogram_counts(&path).is_err());
        std::fs::write(&path, "ulmangio v1\n1 1 1\n0\n0\n").unwrap();
        assert!(read_angiogram_counts(&path).is_err());
    }

    #[test]
    fn mask_sets_round_trip_with_offsets() {
        let dir = std::env::temp_dir().join("ulm_pipeline_masks_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut a = TrackMask::zeros(4, 9);
        a.set(1, 8, true);
        let mut b = TrackMask::zeros(4, 9);
        b.set(3, 0, true);
        b.set(0, 4, true);
        let masks = vec![(a.clone(), (0usize, 12usize)), (b, (36, 0))];

        let path = dir.join("masks.bin");
        write_mask_set(&path, &masks).unwrap();
        assert_eq!(read_mask_set(&path).unwrap(), masks);

        let ragged = vec![masks[0].clone(), (TrackMask::zeros(3, 9), (0, 0))];
        assert!(write_mask_set(&path, &ragged).is_err());
        assert!(write_mask_set(&path, &[]).is_err());

        write_mask_set(&path, &masks).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 1]).unwrap();
        assert!(read_mask_set(&path).is_err());
        let mut extra = full.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(read_mask_set(&path).is_err());
    }

    #[test]
    fn stage_outputs_stay_inside_the_workspace() {
        let cfg = {
            let mut c = RunConfig::desk();
            c.out_dir = PathBuf::from("scratch_out");
            c
        };
        for stage in [
            Stage::Genvasc,
            Stage::Dataset,
            Stage::Train,
            Stage::Infer,
            Stage::Expert,
            Stage::Evaluate,
        ] {
            let outputs = stage.outputs(&cfg);
            assert!(!outputs.is_empty(), "{} lists no outputs", stage.name());
            for path in outputs {
                assert!(path.starts_with(&cfg.out_dir), "{path:?} escapes the workspace");
            }
        }
    }
}
