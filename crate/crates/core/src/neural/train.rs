//! Two-phase optimization of the track network: first against disk-dilated
//! targets, then fine-tuning against the raw masks from the phase-1 weights.

use super::model::{model_backward, model_forward, Gradients, ModelConfig, ModelParams};
use super::ops::dice_loss;
use super::tensor::Tensor;
use crate::rng::{seeded, sub_seed};
use crate::vasculature::TrackMask;
use crate::{Error, Result};
use rand::seq::SliceRandom as _;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const DEFAULT_BATCH_SIZE: usize = 4;

/// Epoch-order shuffling stream; combined with phase and epoch below.
const SHUFFLE_STREAM: u64 = 0x7368_7566_666c_6500;

/// First/second moment estimates per parameter plus the shared step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }
}

/// One optimizer step with bias correction. Parameters without a gradient
/// entry are left untouched.
pub fn adam_step(
    params: &mut ModelParams<f32>,
    grads: &Gradients<f32>,
    state: &mut AdamState,
    lr: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, param) in params.iter_mut() {
        let Some(grad) = grads.get(name) else { continue };
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, p) in param.data_mut().iter_mut().enumerate() {
            let g = grad.data()[i] as f64;
            let mi = ADAM_BETA1 * m[i] as f64 + (1.0 - ADAM_BETA1) * g;
            let vi = ADAM_BETA2 * v[i] as f64 + (1.0 - ADAM_BETA2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            *p -= (lr * (mi / bias1) / ((vi / bias2).sqrt() + ADAM_EPSILON)) as f32;
        }
    }
}

/// Learning-rate decay by `gamma` at each milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepSchedule {
    pub start_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepSchedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.start_lr * self.gamma.powi(k as i32)
    }
}

/// Morphological dilation by a Euclidean disk: a pixel turns on when any
/// source pixel lies within `radius` of it.
pub fn dilate_mask(mask: &TrackMask, radius: usize) -> TrackMask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let mut offsets = Vec::new();
    for dz in -r..=r {
        for dx in -r..=r {
            if dz * dz + dx * dx <= r * r {
                offsets.push((dz, dx));
            }
        }
    }
    let mut out = TrackMask::zeros(mask.n_z, mask.n_x);
    for z in 0..mask.n_z {
        for x in 0..mask.n_x {
            if !mask.get(z, x) {
                continue;
            }
            for &(dz, dx) in &offsets {
                let (zz, xx) = (z as i64 + dz, x as i64 + dx);
                if zz >= 0 && xx >= 0 && (zz as usize) < mask.n_z && (xx as usize) < mask.n_x {
                    out.set(zz as usize, xx as usize, true);
                }
            }
        }
    }
    out
}

/// 0/1 tensor view of a mask, shaped like the network output.
pub fn mask_to_target(mask: &TrackMask) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[1, 1, 1, mask.n_z, mask.n_x]);
    for (dst, src) in t.data_mut().iter_mut().zip(mask.as_bytes()) {
        *dst = *src as f32;
    }
    t
}

#[derive(Debug, Clone)]
pub struct PhaseConfig {
    pub start_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub epochs: usize,
    /// Disk radius applied to the targets for this phase; 0 keeps them raw.
    pub dilation_radius: usize,
}

impl PhaseConfig {
    pub fn schedule(&self) -> MultiStepSchedule {
        MultiStepSchedule {
            start_lr: self.start_lr,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            phase1: PhaseConfig {
                start_lr: 1e-1,
                milestones: vec![15, 45, 75, 100],
                gamma: 0.1,
                epochs: 150,
                dilation_radius: 2,
            },
            phase2: PhaseConfig {
                start_lr: 1e-3,
                milestones: vec![10, 50, 100],
                gamma: 0.1,
                epochs: 150,
                dilation_radius: 0,
            },
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for phase in [&self.phase1, &self.phase2] {
            if !(phase.start_lr > 0.0) || !(phase.gamma > 0.0) {
                return Err(Error::Config("learning rates and gamma must be positive".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be nonzero".into()));
        }
        Ok(())
    }
}

/// One training example: the network input and its fine-grid track mask.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor<f32>,
    pub target: TrackMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl EpochRecord {
    fn row(&self) -> String {
        let val = self.val_loss.map_or_else(|| "-".into(), |v| format!("{v:.9}"));
        format!("{} {} {:e} {:.9} {}", self.phase, self.epoch, self.lr, self.train_loss, val)
    }
}

/// Plain-text log: one `phase epoch lr train_loss val_loss` row per epoch.
pub fn write_training_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# phase epoch lr train_loss val_loss").expect("vec write");
    for rec in log {
        writeln!(out, "{}", rec.row()).expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights at the end of phase 1.
    pub phase1: ModelParams<f32>,
    /// Final weights.
    pub phase2: ModelParams<f32>,
    pub log: Vec<EpochRecord>,
    /// Validation loss of the phase-1 weights against raw targets, computed
    /// once when phase 1 finishes and again from phase 2's starting weights.
    /// The pair must agree exactly; both are kept to make that checkable.
    pub phase1_final_raw_val: Option<f64>,
    pub phase2_initial_val: Option<f64>,
}

fn check_samples(samples: &[TrainSample], cfg: &ModelConfig, role: &str) -> Result<()> {
    let r = cfg.upscale as usize;
    for s in samples {
        let shape = s.input.shape();
        if shape != [1, cfg.in_channels, cfg.n_t, cfg.n_z, cfg.n_x] {
            return Err(Error::shape(
                format!("{role} input (1, {}, {}, {}, {})", cfg.in_channels, cfg.n_t, cfg.n_z, cfg.n_x),
                format!("{shape:?}"),
            ));
        }
        if s.target.n_z != r * cfg.n_z || s.target.n_x != r * cfg.n_x {
            return Err(Error::shape(
                format!("{role} target {}x{}", r * cfg.n_z, r * cfg.n_x),
                format!("{}x{}", s.target.n_z, s.target.n_x),
            ));
        }
    }
    Ok(())
}

/// Mean dice loss of the current weights over `(input, target)` pairs,
/// forward only.
fn mean_loss(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    samples: &[(&TrainSample, Tensor<f32>)],
) -> Result<f64> {
    let losses = samples
        .par_iter()
        .map(|(s, target)| {
            let (out, _) = model_forward(params, cfg, &s.input)?;
            Ok(dice_loss(&out, target)?.0 as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn scaled_sum(per_sample: Vec<Gradients<f32>>) -> Gradients<f32> {
    let w = 1.0 / per_sample.len() as f32;
    let mut total: Gradients<f32> = BTreeMap::new();
    for grads in per_sample {
        for (name, g) in grads {
            match total.get_mut(&name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += w * b;
                    }
                }
                None => {
                    total.insert(name, g.scale(w));
                }
            }
        }
    }
    total
}

struct PhaseResult {
    records: Vec<EpochRecord>,
}

fn run_phase(
    params: &mut ModelParams<f32>,
    phase: u8,
    pcfg: &PhaseConfig,
    model_cfg: &ModelConfig,
    train: &[(&TrainSample, Tensor<f32>)],
    val: &[(&TrainSample, Tensor<f32>)],
    batch_size: usize,
    seed: u64,
) -> Result<PhaseResult> {
    let schedule = pcfg.schedule();
    let mut state = AdamState::new();
    let mut records = Vec::with_capacity(pcfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..pcfg.epochs {
        let lr = schedule.lr_at_epoch(epoch);
        let stream = SHUFFLE_STREAM ^ ((phase as u64) << 32) ^ epoch as u64;
        order.shuffle(&mut seeded(sub_seed(seed, stream)));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            // Samples of a batch run in parallel; the ordered collect keeps
            // the reduction deterministic at any thread count.
            let frozen: &ModelParams<f32> = params;
            let results = chunk
                .par_iter()
                .map(|&i| {
                    let (s, target) = &train[i];
                    let (out, trace) = model_forward(frozen, model_cfg, &s.input)?;
                    let (loss, g_pred) = dice_loss(&out, target)?;
                    let (grads, _) = model_backward(frozen, model_cfg, &trace, &g_pred)?;
                    Ok((loss as f64, grads))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch_loss =
                results.iter().map(|(l, _)| *l).sum::<f64>() / results.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { phase, epoch });
            }
            loss_sum += batch_loss * results.len() as f64;
            let grads = scaled_sum(results.into_iter().map(|(_, g)| g).collect());
            adam_step(params, &grads, &mut state, lr);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(params, model_cfg, val)?) };
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence { phase, epoch });
        }
        records.push(EpochRecord { phase, epoch, lr, train_loss, val_loss });
    }
    Ok(PhaseResult { records })
}

fn with_targets<'a>(
    samples: &'a [TrainSample],
    radius: usize,
) -> Vec<(&'a TrainSample, Tensor<f32>)> {
    samples
        .iter()
        .map(|s| (s, mask_to_target(&dilate_mask(&s.target, radius))))
        .collect()
}

/// Phase 1 against dilated targets, phase 2 continuing from the phase-1
/// weights against the raw masks. Deterministic for a fixed seed.
pub fn train_two_phase(
    train: &[TrainSample],
    val: &[TrainSample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    check_samples(train, model_cfg, "train")?;
    check_samples(val, model_cfg, "validation")?;

    let mut params = super::model::init_params(model_cfg, cfg.seed)?;

    let train1 = with_targets(train, cfg.phase1.dilation_radius);
    let val1 = with_targets(val, cfg.phase1.dilation_radius);
    let phase1_run =
        run_phase(&mut params, 1, &cfg.phase1, model_cfg, &train1, &val1, cfg.batch_size, cfg.seed)?;
    drop((train1, val1));
    let phase1 = params.clone();

    let val_raw = with_targets(val, 0);
    let phase1_final_raw_val =
        if val_raw.is_empty() { None } else { Some(mean_loss(&phase1, model_cfg, &val_raw)?) };

    // Phase 2 starts from the weights already in `params`.
    let phase2_initial_val =
        if val_raw.is_empty() { None } else { Some(mean_loss(&params, model_cfg, &val_raw)?) };

    let train2 = with_targets(train, cfg.phase2.dilation_radius);
    let val2 = with_targets(val, cfg.phase2.dilation_radius);
    let phase2_run =
        run_phase(&mut params, 2, &cfg.phase2, model_cfg, &train2, &val2, cfg.batch_size, cfg.seed)?;

    let mut log = phase1_run.records;
    log.extend(phase2_run.records);
    Ok(TrainOutcome {
        phase1,
        phase2: params,
        log,
        phase1_final_raw_val,
        phase2_initial_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::model::init_params;
    use rand::Rng as _;

    #[test]
    fn adam_first_step_moves_by_the_learning_rate() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 1).unwrap();
        let name = "enc0.conv.bias".to_string();
        let before = params.get(&name).clone();
        let mut grads: Gradients<f32> = BTreeMap::new();
        let mut g = Tensor::zeros(before.shape());
        g.data_mut().fill(1.0);
        grads.insert(name.clone(), g);
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.1);
        for (after, before) in params.get(&name).data().iter().zip(before.data()) {
            assert!((((after - before) as f64) + 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_leaves_parameters_alone_on_zero_gradient() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 2).unwrap();
        let reference = params.clone();
        let grads: Gradients<f32> = params
            .iter()
            .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape())))
            .collect();
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, 0.1);
        }
        assert_eq!(params, reference);
    }

    #[test]
    fn adam_updates_parameters_independently() {
        let cfg = tiny_config();
        let mut both = init_params(&cfg, 3).unwrap();
        let mut solo = both.clone();
        let bias_name = "enc0.conv.bias".to_string();
        let alpha_name = "enc0.act.alpha".to_string();

        let mut grads: Gradients<f32> = BTreeMap::new();
        let mut g = Tensor::zeros(both.get(&bias_name).shape());
        g.data_mut().fill(0.5);
        grads.insert(bias_name.clone(), g.clone());
        let mut state = AdamState::new();
        adam_step(&mut solo, &grads, &mut state, 0.1);

        grads.insert(alpha_name.clone(), g);
        let mut state = AdamState::new();
        adam_step(&mut both, &grads, &mut state, 0.1);
        // The bias trajectory is identical whether or not alpha also moves.
        assert_eq!(both.get(&bias_name), solo.get(&bias_name));
        assert_ne!(both.get(&alpha_name), solo.get(&alpha_name));
    }

    #[test]
    fn schedule_matches_the_milestone_table() {
        let phase1 = MultiStepSchedule {
            start_lr: 1e-1,
            milestones: vec![15, 45, 75, 100],
            gamma: 0.1,
        };
        assert!((phase1.lr_at_epoch(14) - 1e-1).abs() < 1e-12);
        assert!((phase1.lr_at_epoch(15) - 1e-2).abs() < 1e-12);
        assert!((phase1.lr_at_epoch(100) - 1e-5).abs() < 1e-15);
        let phase2 = MultiStepSchedule {
            start_lr: 1e-3,
            milestones: vec![10, 50, 100],
            gamma: 0.1,
        };
        assert!((phase2.lr_at_epoch(0) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn disk_dilation_radius_two_covers_thirteen_pixels() {
        let mut mask = TrackMask::zeros(9, 9);
        mask.set(4, 4, true);
        assert_eq!(dilate_mask(&mask, 0), mask);
        let dilated = dilate_mask(&mask, 2);
        assert_eq!(dilated.count_ones(), 13);
        for (z, x) in [(4, 4), (2, 4), (6, 4), (4, 2), (4, 6), (3, 3), (5, 5)] {
            assert!(dilated.get(z, x));
        }
        assert!(!dilated.get(2, 3), "corner beyond the disk");
    }

    #[test]
    fn dilation_is_monotone() {
        let mut a = TrackMask::zeros(12, 12);
        a.set(3, 3, true);
        let mut b = a.clone();
        b.set(8, 9, true);
        let (da, db) = (dilate_mask(&a, 2), dilate_mask(&b, 2));
        for z in 0..12 {
            for x in 0..12 {
                assert!(!da.get(z, x) || db.get(z, x));
            }
        }
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            encoder_channels: vec![2, 3],
            decoder_channels: vec![2, 2],
            upsampler_channels: vec![1],
            temporal_pool: 2,
            spatial_pool: 2,
            decoder_t_pool: vec![1, 1],
            kernel: 3,
            upscale: 2,
            n_t: 8,
            n_z: 4,
            n_x: 4,
            threshold: 0.5,
        }
    }


    fn tiny_samples(n: usize) -> Vec<TrainSample> {
        let mut rng = crate::rng::seeded(11);
        (0..n)
            .map(|i| {
                let mut target = TrackMask::zeros(8, 8);
                for d in 0..8 {
                    target.set(d, if i % 2 == 0 { d } else { 7 - d }, true);
                }
                // A coarse view of the mask tiled over time with mild noise,
                // like the magnitude ridge a real correlation block carries.
                let mut input = Tensor::<f32>::zeros(&[1, 2, 8, 4, 4]);
                for t in 0..8 {
                    for z in 0..4 {
                        for x in 0..4 {
                            let mut s = 0.0f32;
                            for (dz, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                if target.get(2 * z + dz, 2 * x + dx) {
                                    s += 1.0;
                                }
                            }
                            let noise = rng.random_range(-0.1..0.1f64) as f32;
                            input.data_mut()[(t * 4 + z) * 4 + x] = s + noise;
                            input.data_mut()[((8 + t) * 4 + z) * 4 + x] = -s;
                        }
                    }
                }
                TrainSample { input, target }
            })
            .collect()
    }

    fn tiny_train_config(epochs1: usize, epochs2: usize) -> TrainConfig {
        TrainConfig {
            phase1: PhaseConfig {
                start_lr: 2e-2,
                milestones: vec![90],
                gamma: 0.1,
                epochs: epochs1,
                dilation_radius: 1,
            },
            phase2: PhaseConfig {
                start_lr: 1e-3,
                milestones: vec![40],
                gamma: 0.1,
                epochs: epochs2,
                dilation_radius: 0,
            },
            batch_size: 2,
            seed: 9,
        }
    }

    #[test]
    fn two_samples_are_memorized() {
        let samples = tiny_samples(2);
        let cfg = tiny_config();
        let outcome = train_two_phase(&samples, &[], &cfg, &tiny_train_config(120, 0)).unwrap();
        let first = outcome.log.first().unwrap().train_loss;
        let last = outcome.log.last().unwrap().train_loss;
        assert!(
            last < 0.35 && last < first * 0.6,
            "loss failed to drop: {first} -> {last}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let samples = tiny_samples(3);
        let cfg = tiny_config();
        let tcfg = tiny_train_config(4, 3);
        let a = train_two_phase(&samples[..2], &samples[2..], &cfg, &tcfg).unwrap();
        let b = train_two_phase(&samples[..2], &samples[2..], &cfg, &tcfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.phase2, b.phase2);
    }

    #[test]
    fn phase_two_starts_from_phase_one_weights() {
        let samples = tiny_samples(3);
        let cfg = tiny_config();
        let outcome =
            train_two_phase(&samples[..2], &samples[2..], &cfg, &tiny_train_config(3, 2)).unwrap();
        let end = outcome.phase1_final_raw_val.unwrap();
        let start = outcome.phase2_initial_val.unwrap();
        assert_eq!(end.to_bits(), start.to_bits());
        assert_eq!(outcome.log.len(), 5);
        assert!(outcome.log.iter().all(|r| r.val_loss.is_some()));
    }

    #[test]
    fn non_finite_loss_reports_the_offending_epoch() {
        let mut samples = tiny_samples(2);
        samples[0].input.data_mut()[0] = f32::NAN;
        let cfg = tiny_config();
        let err = train_two_phase(&samples, &[], &cfg, &tiny_train_config(2, 0)).unwrap_err();
        match err {
            Error::Divergence { phase: 1, epoch: 0 } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn log_rows_carry_phase_epoch_and_losses() {
        let dir = std::env::temp_dir().join("ulm_train_log_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("train.log");
        let log = vec![
            EpochRecord { phase: 1, epoch: 0, lr: 0.1, train_loss: 0.75, val_loss: Some(0.8) },
            EpochRecord { phase: 2, epoch: 1, lr: 1e-3, train_loss: 0.25, val_loss: None },
        ];
        write_training_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1 0 1e-1 0.75") || lines[1].starts_with("1 0 1e-1 0.750"));
        assert!(lines[2].ends_with('-'));
    }
}


