//! End-to-end dataset synthesis: bubble transport through a vascular graph,
//! plane-wave channel data, IQ beamforming, clutter filtering, correlation
//! maps, and the matching super-resolved track masks, one file per block.

use super::{
    assemble_block, correlation_map, svd_clutter_filter, write_manifest, write_record,
    DatasetRecord, Split,
};
use crate::acoustics::{
    compound, das_beamform, iq_demodulate, recording_window, simulate_channel_data,
    synthesize_psf, IQBlock, IQFrame, PSFPatch, ProbeConfig, SequenceConfig, GRID_PITCH_UM,
};
use crate::rng::{seeded, sub_seed};
use crate::vasculature::{
    rasterize_tracks, simulate_block, BlockGeometry, FlowField, Trajectory, Vec3, VascularGraph,
};
use crate::{Error, Result};
use rand::Rng as _;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

const SPLIT_STREAM: u64 = 0x7370_6c69_7400_0000;
const BLOCK_STREAM: u64 = 0x626c_6f63_6b00_0000;
const ORIGIN_STREAM: u64 = 0x6f72_6967;

/// Everything that shapes one dataset apart from the probe, the sequence,
/// and the vasculature itself.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_blocks: usize,
    pub density_per_mm3: f64,
    /// Frames per block.
    pub n_t: usize,
    pub block_n_z: usize,
    pub block_n_x: usize,
    /// Mask refinement relative to the beamforming grid; power of two.
    pub upscale: u32,
    /// Leading singular components removed from each block.
    pub svd_cutoff: usize,
    /// Depth of the volume's top face below the array, micrometers.
    pub standoff_um: f64,
    /// Correlation template sides (z, x), odd.
    pub psf_patch: (usize, usize),
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.n_t == 0 || self.block_n_z == 0 || self.block_n_x == 0 {
            return Err(Error::Config("block count, frames, and sides must be nonzero".into()));
        }
        if self.upscale == 0 || !self.upscale.is_power_of_two() {
            return Err(Error::Config(format!(
                "mask upscale {} is not a power of two",
                self.upscale
            )));
        }
        if self.psf_patch.0 % 2 == 0 || self.psf_patch.1 % 2 == 0 {
            return Err(Error::Config("correlation template sides must be odd".into()));
        }
        if !(self.standoff_um >= GRID_PITCH_UM) {
            return Err(Error::Config("standoff must be at least one grid pitch".into()));
        }
        if !(self.density_per_mm3 >= 0.0) {
            return Err(Error::Config("bubble density must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Nine of every ten blocks train, the rest validate.
    TrainVal,
    /// Every block is held out.
    Test,
}

/// Deterministic train/validation assignment: indices are ranked by a
/// per-index hash of the seed and the lowest tenth (rounded down) validates.
pub fn assign_splits(n_blocks: usize, seed: u64) -> Vec<Split> {
    let n_val = n_blocks / 10;
    let mut order: Vec<usize> = (0..n_blocks).collect();
    order.sort_by_key(|&i| (sub_seed(seed, SPLIT_STREAM | i as u64), i));
    let mut splits = vec![Split::Train; n_blocks];
    for &i in order.iter().take(n_val) {
        splits[i] = Split::Validation;
    }
    splits
}

/// Graph coordinates -> probe coordinates: the volume is centered laterally
/// on the aperture, its top face sits `standoff_um` deep, both snapped to
/// the grid pitch so every block shares one lattice. Elevation collapses
/// to the imaging plane.
struct ProbeMap {
    shift_x_um: f64,
    shift_z_um: f64,
}

impl ProbeMap {
    fn new(graph: &VascularGraph, standoff_um: f64) -> ProbeMap {
        let snap = |v: f64| (v / GRID_PITCH_UM).round() * GRID_PITCH_UM;
        let extent = graph.bounds.extent();
        ProbeMap {
            shift_x_um: -graph.bounds.min.x - snap(extent.x / 2.0),
            shift_z_um: -graph.bounds.min.z + snap(standoff_um),
        }
    }

    fn apply(&self, p: Vec3) -> Vec3 {
        Vec3::new(p.x + self.shift_x_um, 0.0, p.z + self.shift_z_um)
    }

    /// Inclusive lattice slot counts for block origins along z and x.
    fn origin_slots(
        &self,
        graph: &VascularGraph,
        block_n_z: usize,
        block_n_x: usize,
    ) -> Result<(u64, u64)> {
        let extent = graph.bounds.extent();
        let slots = |volume_um: f64, pixels: usize| {
            let span = volume_um - pixels as f64 * GRID_PITCH_UM;
            if span < 0.0 {
                return Err(Error::Config(format!(
                    "{pixels}-pixel block does not fit inside the {volume_um:.0} um volume"
                )));
            }
            Ok((span / GRID_PITCH_UM).floor() as u64)
        };
        Ok((slots(extent.z, block_n_z)?, slots(extent.x, block_n_x)?))
    }
}

/// Synthesize `cfg.n_blocks` blocks under `out_dir` plus a manifest, and
/// return the manifest entries. Blocks are independent and generated in
/// parallel; output bytes depend only on the inputs, never on scheduling.
pub fn generate_dataset(
    out_dir: &Path,
    graph: &VascularGraph,
    probe: &ProbeConfig,
    seq: &SequenceConfig,
    cfg: &DatasetConfig,
    mode: SplitMode,
) -> Result<Vec<(Split, PathBuf)>> {
    cfg.validate()?;
    probe.validate()?;
    seq.validate()?;
    graph.validate()?;
    if !(seq.frame_rate_hz > 0.0) {
        return Err(Error::Config("frame rate must be positive".into()));
    }
    let map = ProbeMap::new(graph, cfg.standoff_um);
    let slots = map.origin_slots(graph, cfg.block_n_z, cfg.block_n_x)?;
    let flow = FlowField::new(graph);
    let psf = synthesize_psf(probe, seq, cfg.psf_patch)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let names = (0..cfg.n_blocks)
        .into_par_iter()
        .map(|i| {
            generate_one(i, out_dir, graph, &flow, &map, slots, probe, seq, cfg, &psf)
                .map_err(|e| e.in_block(i))
        })
        .collect::<Result<Vec<PathBuf>>>()?;

    let splits = match mode {
        SplitMode::TrainVal => assign_splits(cfg.n_blocks, cfg.seed),
        SplitMode::Test => vec![Split::Test; cfg.n_blocks],
    };
    let entries: Vec<(Split, PathBuf)> = splits.into_iter().zip(names).collect();
    write_manifest(out_dir, &entries)?;
    Ok(entries)
}

#[allow(clippy::too_many_arguments)]
fn generate_one(
    index: usize,
    out_dir: &Path,
    graph: &VascularGraph,
    flow: &FlowField,
    map: &ProbeMap,
    slots: (u64, u64),
    probe: &ProbeConfig,
    seq: &SequenceConfig,
    cfg: &DatasetConfig,
    psf: &PSFPatch,
) -> Result<PathBuf> {
    let block_seed = sub_seed(cfg.seed, BLOCK_STREAM | index as u64);
    let mut rng = seeded(sub_seed(block_seed, ORIGIN_STREAM));
    let geom = BlockGeometry {
        origin_z_um: map.shift_z_um + graph.bounds.min.z
            + rng.random_range(0..=slots.0) as f64 * GRID_PITCH_UM,
        origin_x_um: map.shift_x_um + graph.bounds.min.x
            + rng.random_range(0..=slots.1) as f64 * GRID_PITCH_UM,
        n_z: cfg.block_n_z,
        n_x: cfg.block_n_x,
        pitch_um: GRID_PITCH_UM,
    };

    let dt_s = 1.0 / seq.frame_rate_hz;
    let tracks = simulate_block(graph, flow, cfg.density_per_mm3, cfg.n_t as u32, dt_s, block_seed)?;
    let tracks: Vec<Trajectory> = tracks
        .into_iter()
        .map(|t| Trajectory {
            track: t.track,
            samples: t.samples.into_iter().map(|(f, p)| (f, map.apply(p))).collect(),
        })
        .collect();

    let mut per_frame: Vec<Vec<(Vec3, f64)>> = vec![Vec::new(); cfg.n_t];
    for traj in &tracks {
        for &(f, p) in &traj.samples {
            per_frame[f as usize].push((p, 1.0));
        }
    }

    let window = recording_window(probe, seq, &geom);
    let mut compounded = Vec::with_capacity(cfg.n_t);
    for scatterers in &per_frame {
        let mut angle_frames = Vec::with_capacity(seq.angles_deg.len());
        for &angle in &seq.angles_deg {
            let rf = simulate_channel_data(scatterers, probe, seq, angle, window)?;
            let iq = iq_demodulate(&rf, probe.center_freq_hz, seq.decimation)?;
            angle_frames.push(das_beamform(&iq, probe, angle, &geom));
        }
        compounded.push(compound(&angle_frames)?);
    }

    let filtered = svd_clutter_filter(&IQBlock::from_frames(&compounded)?, cfg.svd_cutoff)?;
    let chi_frames: Vec<IQFrame> = (0..cfg.n_t)
        .map(|t| {
            let mut frame = IQFrame::zeros(geom);
            frame.data_mut().copy_from_slice(filtered.frame(t));
            correlation_map(&frame, psf)
        })
        .collect();
    let chi = assemble_block(&chi_frames, 0, cfg.n_t)?;
    let psi = rasterize_tracks(&tracks, &geom, cfg.upscale as usize)?;

    let record = DatasetRecord {
        chi,
        psi,
        density_per_mm3: cfg.density_per_mm3,
        seed: block_seed,
        upscale: cfg.upscale,
    };
    let name = PathBuf::from(format!("block_{index:05}.ulmb"));
    write_record(&out_dir.join(&name), &record)?;
    Ok(name)
}
