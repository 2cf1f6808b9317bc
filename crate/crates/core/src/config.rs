//! Declarative run configuration.
//!
//! One TOML file drives every stage. Each section mirrors one module's
//! config; defaults are the full-scale acquisition values, and the `desk`
//! profile swaps in the laptop-scale preset. Unknown keys are rejected so a
//! typo cannot silently fall back to a default. Per-stage seeds derive from
//! the one global seed through fixed streams, so a single integer pins the
//! whole pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::{ProbeConfig, SequenceConfig};
use crate::error::{Error, Result};
use crate::inference::WindowPlan;
use crate::neural::{ModelConfig, PhaseConfig, TrainConfig};
use crate::preprocess::DatasetConfig;
use crate::rng::sub_seed;
use crate::vasculature::GraphConfig;

pub const CONFIG_VERSION: u32 = 1;

const GRAPH_STREAM: u64 = 0x6772_6170_68; // "graph"
const HOLDOUT_STREAM: u64 = 0x686f_6c64_6f; // "holdo"
const DATASET_STREAM: u64 = 0x6461_7461_7374; // "datast"
const TRAIN_STREAM: u64 = 0x7472_6169_6e; // "train"
const EVAL_STREAM: u64 = 0x6576_616c_64; // "evald"

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("ulm_out")
}

/// Synthetic vascular growth volume and branching statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VasculatureSection {
    pub volume_um: [f64; 3],
    pub target_edges: usize,
    pub radius_range_um: [f64; 2],
    pub root_radius_um: [f64; 2],
    pub branch_probability: f64,
    pub loop_probability: f64,
    pub dilation: f64,
}

impl Default for VasculatureSection {
    fn default() -> Self {
        let g = GraphConfig::default();
        VasculatureSection {
            volume_um: g.volume_um,
            target_edges: g.target_edges,
            radius_range_um: [g.radius_range_um.0, g.radius_range_um.1],
            root_radius_um: [g.root_radius_um.0, g.root_radius_um.1],
            branch_probability: g.branch_probability,
            loop_probability: g.loop_probability,
            dilation: g.dilation,
        }
    }
}

impl VasculatureSection {
    fn to_graph_config(&self, seed: u64) -> GraphConfig {
        GraphConfig {
            volume_um: self.volume_um,
            target_edges: self.target_edges,
            radius_range_um: (self.radius_range_um[0], self.radius_range_um[1]),
            root_radius_um: (self.root_radius_um[0], self.root_radius_um[1]),
            branch_probability: self.branch_probability,
            loop_probability: self.loop_probability,
            dilation: self.dilation,
            seed,
        }
    }
}

/// Linear array; defaults are the 15.625 MHz 128-element probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub n_elements: usize,
    pub pitch_m: f64,
    pub element_width_m: f64,
    pub center_freq_hz: f64,
    pub elevation_focus_m: f64,
    pub sound_speed_m_s: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        ProbeSection {
            n_elements: p.n_elements,
            pitch_m: p.pitch_m,
            element_width_m: p.element_width_m,
            center_freq_hz: p.center_freq_hz,
            elevation_focus_m: p.elevation_focus_m,
            sound_speed_m_s: p.sound_speed_m_s,
        }
    }
}

impl ProbeSection {
    fn to_probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            n_elements: self.n_elements,
            pitch_m: self.pitch_m,
            element_width_m: self.element_width_m,
            center_freq_hz: self.center_freq_hz,
            elevation_focus_m: self.elevation_focus_m,
            sound_speed_m_s: self.sound_speed_m_s,
        }
    }
}

/// Plane-wave transmit sequence; defaults are three angles at 1000 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSection {
    pub tx_freq_hz: f64,
    pub n_cycles: u32,
    pub angles_deg: Vec<f64>,
    pub prf_hz: f64,
    pub frame_rate_hz: f64,
    pub fs_rf_hz: f64,
    pub decimation: usize,
}

impl Default for SequenceSection {
    fn default() -> Self {
        let s = SequenceConfig::default();
        SequenceSection {
            tx_freq_hz: s.tx_freq_hz,
            n_cycles: s.n_cycles,
            angles_deg: s.angles_deg,
            prf_hz: s.prf_hz,
            frame_rate_hz: s.frame_rate_hz,
            fs_rf_hz: s.fs_rf_hz,
            decimation: s.decimation,
        }
    }
}

impl SequenceSection {
    fn to_sequence_config(&self) -> SequenceConfig {
        SequenceConfig {
            tx_freq_hz: self.tx_freq_hz,
            n_cycles: self.n_cycles,
            angles_deg: self.angles_deg.clone(),
            prf_hz: self.prf_hz,
            frame_rate_hz: self.frame_rate_hz,
            fs_rf_hz: self.fs_rf_hz,
            decimation: self.decimation,
        }
    }
}

/// Training-set synthesis: block geometry, bubble density, preprocessing.
/// The mask upscale here is the single source of the resolution factor r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_blocks: usize,
    pub density_per_mm3: f64,
    pub n_t: usize,
    pub block_n_z: usize,
    pub block_n_x: usize,
    pub upscale: u32,
    pub svd_cutoff: usize,
    pub standoff_um: f64,
    pub psf_patch: [usize; 2],
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_blocks: 2500,
            density_per_mm3: 10.0,
            n_t: 512,
            block_n_z: 32,
            block_n_x: 32,
            upscale: 8,
            svd_cutoff: 1,
            standoff_um: 8000.0,
            psf_patch: [9, 9],
        }
    }
}

impl DatasetSection {
    fn to_dataset_config(&self, n_blocks: usize, density_per_mm3: f64, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_blocks,
            density_per_mm3,
            n_t: self.n_t,
            block_n_z: self.block_n_z,
            block_n_x: self.block_n_x,
            upscale: self.upscale,
            svd_cutoff: self.svd_cutoff,
            standoff_um: self.standoff_um,
            psf_patch: (self.psf_patch[0], self.psf_patch[1]),
            seed,
        }
    }
}

/// Network widths and pooling. Input geometry (frames, block sides, output
/// upscale) comes from the dataset section so the two can never disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub upsampler_channels: Vec<usize>,
    pub temporal_pool: usize,
    pub spatial_pool: usize,
    pub decoder_t_pool: Vec<usize>,
    pub kernel: usize,
    pub threshold: f32,
}

impl ModelSection {
    fn from_model_config(m: &ModelConfig) -> Self {
        ModelSection {
            in_channels: m.in_channels,
            encoder_channels: m.encoder_channels.clone(),
            decoder_channels: m.decoder_channels.clone(),
            upsampler_channels: m.upsampler_channels.clone(),
            temporal_pool: m.temporal_pool,
            spatial_pool: m.spatial_pool,
            decoder_t_pool: m.decoder_t_pool.clone(),
            kernel: m.kernel,
            threshold: m.threshold,
        }
    }

    fn to_model_config(&self, dataset: &DatasetSection) -> ModelConfig {
        ModelConfig {
            in_channels: self.in_channels,
            encoder_channels: self.encoder_channels.clone(),
            decoder_channels: self.decoder_channels.clone(),
            upsampler_channels: self.upsampler_channels.clone(),
            temporal_pool: self.temporal_pool,
            spatial_pool: self.spatial_pool,
            decoder_t_pool: self.decoder_t_pool.clone(),
            kernel: self.kernel,
            upscale: dataset.upscale,
            n_t: dataset.n_t,
            n_z: dataset.block_n_z,
            n_x: dataset.block_n_x,
            threshold: self.threshold,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from_model_config(&ModelConfig::paper())
    }
}

/// One optimization phase of the two-phase schedule. The two phases default
/// differently, so a phase table, when written out, must be complete; omit
/// it entirely to keep the profile's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub start_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub epochs: usize,
    pub dilation_radius: usize,
}

impl PhaseSection {
    fn from_phase_config(p: &PhaseConfig) -> Self {
        PhaseSection {
            start_lr: p.start_lr,
            milestones: p.milestones.clone(),
            gamma: p.gamma,
            epochs: p.epochs,
            dilation_radius: p.dilation_radius,
        }
    }

    fn to_phase_config(&self) -> PhaseConfig {
        PhaseConfig {
            start_lr: self.start_lr,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
            epochs: self.epochs,
            dilation_radius: self.dilation_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub phase1: PhaseSection,
    pub phase2: PhaseSection,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            batch_size: t.batch_size,
            phase1: PhaseSection::from_phase_config(&t.phase1),
            phase2: PhaseSection::from_phase_config(&t.phase2),
        }
    }
}

/// Sliding-window tiling and the baseline detector threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub stride: usize,
    pub crop_margin: usize,
    pub expert_threshold: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let plan = WindowPlan::paper(&ModelConfig::paper());
        InferenceSection {
            stride: plan.stride,
            crop_margin: plan.crop_margin,
            expert_threshold: crate::expert::DEFAULT_DETECTION_THRESHOLD,
        }
    }
}

/// Held-out scoring protocol: densities to sweep, the size of the full
/// reference set, how many blocks each scored row accumulates, and the
/// filling-curve checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub densities_per_mm3: Vec<f64>,
    pub n_blocks: usize,
    pub scored_blocks: usize,
    pub checkpoints: Vec<usize>,
    /// Fine-grid row for the intensity-profile export; field middle if unset.
    pub profile_row: Option<usize>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            densities_per_mm3: vec![1.0, 2.5, 5.0, 10.0],
            n_blocks: 4000,
            scored_blocks: 800,
            checkpoints: vec![250, 500, 1000, 2000, 4000],
            profile_row: None,
        }
    }
}

/// The whole run. Serializes to the versioned TOML the `ulm` binary accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub vasculature: VasculatureSection,
    pub probe: ProbeSection,
    pub sequence: SequenceSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub inference: InferenceSection,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: default_version(),
            seed: 0,
            out_dir: default_out_dir(),
            vasculature: VasculatureSection::default(),
            probe: ProbeSection::default(),
            sequence: SequenceSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            inference: InferenceSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl RunConfig {
    /// Full-scale profile: every default as stated for the acquisition and
    /// the network. Multi-day on a workstation.
    pub fn paper() -> RunConfig {
        RunConfig::default()
    }

    /// Laptop-scale profile: a quarter-cubic-millimeter volume, 16x16x128
    /// blocks at r = 4, 200 training blocks, 30+30 epochs, narrow channels.
    /// The phase-1 learning rate sits below the full-scale 1e-1 because the
    /// few small batches per epoch otherwise drive the sigmoid head into
    /// saturation before the schedule first decays.
    pub fn desk() -> RunConfig {
        let model = ModelConfig::desk();
        RunConfig {
            vasculature: VasculatureSection {
                volume_um: [630.0, 630.0, 630.0],
                target_edges: 60,
                ..VasculatureSection::default()
            },
            dataset: DatasetSection {
                n_blocks: 200,
                n_t: model.n_t,
                block_n_z: model.n_z,
                block_n_x: model.n_x,
                upscale: model.upscale,
                ..DatasetSection::default()
            },
            model: ModelSection::from_model_config(&model),
            training: TrainingSection {
                batch_size: 4,
                phase1: PhaseSection {
                    start_lr: 2e-2,
                    milestones: vec![15, 25],
                    gamma: 0.1,
                    epochs: 30,
                    dilation_radius: 2,
                },
                phase2: PhaseSection {
                    start_lr: 1e-3,
                    milestones: vec![10, 20],
                    gamma: 0.1,
                    epochs: 30,
                    dilation_radius: 0,
                },
            },
            inference: InferenceSection {
                stride: model.n_z / 2,
                crop_margin: model.n_z * model.upscale as usize / 8,
                expert_threshold: crate::expert::DEFAULT_DETECTION_THRESHOLD,
            },
            evaluation: EvaluationSection {
                densities_per_mm3: vec![5.0, 10.0],
                n_blocks: 120,
                scored_blocks: 60,
                checkpoints: vec![15, 30, 60, 120],
                profile_row: None,
            },
            ..RunConfig::default()
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text, path)
    }

    /// The fully resolved configuration as TOML: what any command logs, and
    /// what reproduces the run when fed back through `--config`.
    pub fn effective_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn graph_config(&self) -> GraphConfig {
        self.vasculature.to_graph_config(sub_seed(self.seed, GRAPH_STREAM))
    }

    /// Same growth statistics, disjoint seed: the evaluation network.
    pub fn holdout_graph_config(&self) -> GraphConfig {
        self.vasculature.to_graph_config(sub_seed(self.seed, HOLDOUT_STREAM))
    }

    pub fn probe_config(&self) -> ProbeConfig {
        self.probe.to_probe_config()
    }

    pub fn sequence_config(&self) -> SequenceConfig {
        self.sequence.to_sequence_config()
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        self.dataset.to_dataset_config(
            self.dataset.n_blocks,
            self.dataset.density_per_mm3,
            sub_seed(self.seed, DATASET_STREAM),
        )
    }

    /// Held-out test set for one evaluation density.
    pub fn eval_dataset_config(&self, density_index: usize) -> Result<DatasetConfig> {
        let density = *self.evaluation.densities_per_mm3.get(density_index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "density index {density_index} outside the {} configured densities",
                self.evaluation.densities_per_mm3.len()
            ))
        })?;
        Ok(self.dataset.to_dataset_config(
            self.evaluation.n_blocks,
            density,
            sub_seed(sub_seed(self.seed, EVAL_STREAM), density_index as u64),
        ))
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.to_model_config(&self.dataset)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            phase1: self.training.phase1.to_phase_config(),
            phase2: self.training.phase2.to_phase_config(),
            batch_size: self.training.batch_size,
            seed: sub_seed(self.seed, TRAIN_STREAM),
        }
    }

    pub fn window_plan(&self) -> WindowPlan {
        let m = self.model_config();
        WindowPlan {
            window: (m.n_z, m.n_x),
            stride: self.inference.stride,
            crop_margin: self.inference.crop_margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported, this build reads version {CONFIG_VERSION}",
                self.version
            )));
        }
        if self.vasculature.volume_um.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("vasculature volume extents must be positive".into()));
        }
        self.probe_config().validate()?;
        self.sequence_config().validate()?;
        self.dataset_config().validate()?;
        let model = self.model_config();
        model.validate()?;
        self.train_config().validate()?;
        self.window_plan().validate(&model)?;
        if !(self.inference.expert_threshold > 0.0 && self.inference.expert_threshold < 1.0) {
            return Err(Error::Config(format!(
                "expert detection threshold {} outside (0, 1)",
                self.inference.expert_threshold
            )));
        }
        let eval = &self.evaluation;
        if eval.densities_per_mm3.is_empty() {
            return Err(Error::Config("evaluation needs at least one density".into()));
        }
        if eval.densities_per_mm3.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("evaluation densities must be positive".into()));
        }
        if eval.n_blocks == 0 || eval.scored_blocks == 0 || eval.scored_blocks > eval.n_blocks {
            return Err(Error::Config(format!(
                "scored blocks {} must lie in 1..={} reference blocks",
                eval.scored_blocks, eval.n_blocks
            )));
        }
        if eval.checkpoints.is_empty() {
            return Err(Error::Config("evaluation needs at least one checkpoint".into()));
        }
        if eval.checkpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("evaluation checkpoints must be nondecreasing".into()));
        }
        if *eval.checkpoints.last().expect("nonempty") > eval.n_blocks {
            return Err(Error::Config(format!(
                "largest checkpoint exceeds the {} reference blocks",
                eval.n_blocks
            )));
        }
        Ok(())
    }
}
