//! The spatiotemporal encoder-decoder. Encoder stages convolve and
//! max-pool (hard along t); decoder stages pool the remaining time, resize
//! space back up, and mix in temporally averaged encoder skips; the time
//! axis is then collapsed by mean and log2(r) resize-convolution stages
//! lift the result onto the fine grid, ending in a sigmoid.

use super::ops::*;
use super::tensor::{Element, Tensor};
use crate::preprocess::CorrelationBlock;
use crate::rng::{seeded, sub_seed};
use crate::vasculature::TrackMask;
use crate::{Error, Result};
use rand::Rng as _;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Output channels per encoder stage.
    pub encoder_channels: Vec<usize>,
    /// Output channels per decoder stage.
    pub decoder_channels: Vec<usize>,
    /// Output channels per upsampling stage; the last must be 1.
    pub upsampler_channels: Vec<usize>,
    /// Encoder pooling along t.
    pub temporal_pool: usize,
    /// Encoder pooling along z and x.
    pub spatial_pool: usize,
    /// Decoder temporal pooling per stage.
    pub decoder_t_pool: Vec<usize>,
    /// Convolution kernel side, odd.
    pub kernel: usize,
    /// Fine-grid factor r; output sides are r times the input sides.
    pub upscale: u32,
    pub n_t: usize,
    pub n_z: usize,
    pub n_x: usize,
    /// Binarization threshold on the sigmoid output.
    pub threshold: f32,
}

impl ModelConfig {
    /// Full-scale reference configuration (r = 8, 512-frame blocks).
    pub fn paper() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            encoder_channels: vec![16, 32],
            decoder_channels: vec![16, 16],
            upsampler_channels: vec![8, 4, 1],
            temporal_pool: 4,
            spatial_pool: 2,
            decoder_t_pool: vec![4, 4],
            kernel: 3,
            upscale: 8,
            n_t: 512,
            n_z: 32,
            n_x: 32,
            threshold: 0.5,
        }
    }

    /// Laptop-scale configuration (r = 4, 128-frame blocks).
    pub fn desk() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            encoder_channels: vec![8, 16],
            decoder_channels: vec![8, 8],
            upsampler_channels: vec![4, 1],
            temporal_pool: 4,
            spatial_pool: 2,
            decoder_t_pool: vec![2, 2],
            kernel: 3,
            upscale: 4,
            n_t: 128,
            n_z: 16,
            n_x: 16,
            threshold: 0.5,
        }
    }

    pub fn down_blocks(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.down_blocks();
        if d == 0 || self.decoder_channels.len() != d || self.decoder_t_pool.len() != d {
            return Err(Error::Config(
                "encoder, decoder, and decoder pooling stage counts must match and be nonzero"
                    .into(),
            ));
        }
        if self.in_channels == 0 || self.encoder_channels.contains(&0)
            || self.decoder_channels.contains(&0) || self.upsampler_channels.contains(&0)
        {
            return Err(Error::Config("channel widths must be nonzero".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel side must be odd".into()));
        }
        if self.upscale < 2 || !self.upscale.is_power_of_two() {
            return Err(Error::Config("upscale must be a power of two >= 2".into()));
        }
        let stages = (self.upscale as f64).log2().round() as usize;
        if self.upsampler_channels.len() != stages {
            return Err(Error::Config(format!(
                "upscale {} needs {stages} upsampling stages, got {}",
                self.upscale,
                self.upsampler_channels.len()
            )));
        }
        if *self.upsampler_channels.last().unwrap() != 1 {
            return Err(Error::Config("the last upsampling stage must emit one channel".into()));
        }
        // The decoder doubles z and x once per stage, so the encoder
        // reduction must match exactly for the shapes to close.
        let enc_reduction = self.spatial_pool.checked_pow(d as u32);
        if enc_reduction != Some(1usize << d) {
            return Err(Error::Config(format!(
                "spatial pool {} over {d} stages must halve {d} times",
                self.spatial_pool
            )));
        }
        let t_div = self.temporal_pool.pow(d as u32)
            * self.decoder_t_pool.iter().product::<usize>();
        if self.n_t == 0 || self.n_t % t_div != 0 {
            return Err(Error::Config(format!(
                "{} frames are not divisible by the pooling chain {t_div}",
                self.n_t
            )));
        }
        let s_div = 1usize << d;
        if self.n_z % s_div != 0 || self.n_x % s_div != 0 || self.n_z == 0 || self.n_x == 0 {
            return Err(Error::Config(format!(
                "spatial sides {}x{} are not divisible by {s_div}",
                self.n_z, self.n_x
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Named parameter tensors. Names are structural (`enc0.conv.weight`, ...)
/// and the map order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<E: Element = f32> {
    tensors: BTreeMap<String, Tensor<E>>,
}

/// Gradients mirror the parameter names exactly.
pub type Gradients<E> = BTreeMap<String, Tensor<E>>;

fn name_stream(name: &str) -> u64 {
    // FNV-1a; ties each tensor's init stream to its name, not its order.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x1000_0000_01b3);
    }
    h
}

impl<E: Element> ModelParams<E> {
    pub fn empty() -> ModelParams<E> {
        ModelParams { tensors: BTreeMap::new() }
    }

    pub fn get(&self, name: &str) -> &Tensor<E> {
        self.tensors.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<E>) {
        self.tensors.insert(name, tensor);
    }

    pub fn cast<T: Element>(&self) -> ModelParams<T> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.all_finite())
    }
}

/// Per-layer (conv weight, conv bias, optional activation slope) shapes in
/// creation order, derived purely from the config.
fn layer_plan(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let mut plan = Vec::new();
    let k = cfg.kernel;
    let d = cfg.down_blocks();
    let mut c_in = cfg.in_channels;
    for (i, &c_out) in cfg.encoder_channels.iter().enumerate() {
        plan.push((format!("enc{i}"), vec![c_out, c_in, k, k, k], true));
        c_in = c_out;
    }
    for (j, &c_out) in cfg.decoder_channels.iter().enumerate() {
        let skip_c = cfg.encoder_channels[d - 1 - j];
        plan.push((format!("dec{j}"), vec![c_out, c_in + skip_c, k, k, k], true));
        c_in = c_out;
    }
    let last = cfg.upsampler_channels.len() - 1;
    for (u, &c_out) in cfg.upsampler_channels.iter().enumerate() {
        plan.push((format!("up{u}"), vec![c_out, c_in, 1, k, k], u != last));
        c_in = c_out;
    }
    plan
}

/// Fan-in-scaled uniform weights, zero biases, activation slopes at 0.25.
/// Every tensor draws from its own name-derived stream.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<f32>> {
    cfg.validate()?;
    let mut tensors = BTreeMap::new();
    for (stage, w_shape, has_act) in layer_plan(cfg) {
        let fan_in: usize = w_shape[1..].iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w_name = format!("{stage}.conv.weight");
        let mut rng = seeded(sub_seed(seed, name_stream(&w_name)));
        let mut w = Tensor::zeros(&w_shape);
        for v in w.data_mut() {
            *v = rng.random_range(-bound..bound) as f32;
        }
        tensors.insert(w_name, w);
        tensors.insert(format!("{stage}.conv.bias"), Tensor::zeros(&[w_shape[0]]));
        if has_act {
            tensors.insert(
                format!("{stage}.act.alpha"),
                Tensor::from_vec(&[w_shape[0]], vec![0.25; w_shape[0]])?,
            );
        }
    }
    Ok(ModelParams { tensors })
}

/// Activations stashed by the forward pass for the exact backward walk.
pub struct Trace<E: Element> {
    input: Tensor<E>,
    enc_pre: Vec<Tensor<E>>,
    enc_act: Vec<Tensor<E>>,
    enc_argmax: Vec<Vec<usize>>,
    enc_pooled: Vec<Tensor<E>>,
    dec_tp_in_shape: Vec<Vec<usize>>,
    dec_tp_argmax: Vec<Vec<usize>>,
    dec_resized_c: Vec<usize>,
    dec_skip_factor: Vec<usize>,
    dec_concat: Vec<Tensor<E>>,
    dec_pre: Vec<Tensor<E>>,
    mean_in_shape: Vec<usize>,
    up_in: Vec<Tensor<E>>,
    up_pre: Vec<Tensor<E>>,
    sig_out: Tensor<E>,
}

impl<E: Element> Trace<E> {
    pub fn output(&self) -> &Tensor<E> {
        &self.sig_out
    }
}

/// Run the network. Returns the probability map of shape
/// (batch, 1, 1, r n_z, r n_x) together with the trace for backward.
pub fn model_forward<E: Element>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    input: &Tensor<E>,
) -> Result<(Tensor<E>, Trace<E>)> {
    let shape = input.shape();
    if shape.len() != 5
        || shape[1] != cfg.in_channels
        || shape[2] != cfg.n_t
        || shape[3] != cfg.n_z
        || shape[4] != cfg.n_x
    {
        return Err(Error::shape(
            format!("(b, {}, {}, {}, {})", cfg.in_channels, cfg.n_t, cfg.n_z, cfg.n_x),
            format!("{shape:?}"),
        ));
    }
    let d = cfg.down_blocks();
    let pool = (cfg.temporal_pool, cfg.spatial_pool, cfg.spatial_pool);

    let mut enc_pre = Vec::with_capacity(d);
    let mut enc_act = Vec::with_capacity(d);
    let mut enc_argmax = Vec::with_capacity(d);
    let mut enc_pooled = Vec::with_capacity(d);
    let mut x = input.clone();
    for i in 0..d {
        let pre = conv3d_forward(
            &x,
            params.get(&format!("enc{i}.conv.weight")),
            params.get(&format!("enc{i}.conv.bias")),
        )?;
        let act = prelu_forward(&pre, params.get(&format!("enc{i}.act.alpha")))?;
        let (pooled, argmax) = maxpool3d_forward(&act, pool)?;
        enc_pre.push(pre);
        enc_act.push(act);
        enc_argmax.push(argmax);
        x = pooled.clone();
        enc_pooled.push(pooled);
    }

    let mut dec_tp_in_shape = Vec::with_capacity(d);
    let mut dec_tp_argmax = Vec::with_capacity(d);
    let mut dec_resized_c = Vec::with_capacity(d);
    let mut dec_skip_factor = Vec::with_capacity(d);
    let mut dec_concat = Vec::with_capacity(d);
    let mut dec_pre = Vec::with_capacity(d);
    for j in 0..d {
        dec_tp_in_shape.push(x.shape().to_vec());
        let (tp, argmax) = maxpool3d_forward(&x, (cfg.decoder_t_pool[j], 1, 1))?;
        dec_tp_argmax.push(argmax);
        let resized = nn_resize_forward(&tp, (1, 2, 2))?;
        dec_resized_c.push(resized.shape()[1]);

        let skip_src = &enc_act[d - 1 - j];
        let factor = skip_src.shape()[2] / resized.shape()[2];
        dec_skip_factor.push(factor);
        let skip = avgpool3d_forward(skip_src, (factor, 1, 1))?;
        let cat = concat_channels(&resized, &skip)?;
        let pre = conv3d_forward(
            &cat,
            params.get(&format!("dec{j}.conv.weight")),
            params.get(&format!("dec{j}.conv.bias")),
        )?;
        let act = prelu_forward(&pre, params.get(&format!("dec{j}.act.alpha")))?;
        dec_concat.push(cat);
        dec_pre.push(pre);
        x = act;
    }

    let mean_in_shape = x.shape().to_vec();
    x = temporal_mean_forward(&x);

    let stages = cfg.upsampler_channels.len();
    let mut up_in = Vec::with_capacity(stages);
    let mut up_pre = Vec::with_capacity(stages);
    for u in 0..stages {
        let resized = nn_resize_forward(&x, (1, 2, 2))?;
        let pre = conv3d_forward(
            &resized,
            params.get(&format!("up{u}.conv.weight")),
            params.get(&format!("up{u}.conv.bias")),
        )?;
        up_in.push(resized);
        x = if u + 1 < stages {
            prelu_forward(&pre, params.get(&format!("up{u}.act.alpha")))?
        } else {
            pre.clone()
        };
        up_pre.push(pre);
    }

    let sig_out = sigmoid_forward(&x);
    let trace = Trace {
        input: input.clone(),
        enc_pre,
        enc_act,
        enc_argmax,
        enc_pooled,
        dec_tp_in_shape,
        dec_tp_argmax,
        dec_resized_c,
        dec_skip_factor,
        dec_concat,
        dec_pre,
        mean_in_shape,
        up_in,
        up_pre,
        sig_out: sig_out.clone(),
    };
    Ok((sig_out, trace))
}

/// Exact adjoint of `model_forward`. Returns parameter gradients keyed like
/// the parameters, plus the gradient with respect to the input block.
pub fn model_backward<E: Element>(
    params: &ModelParams<E>,
    cfg: &ModelConfig,
    trace: &Trace<E>,
    upstream: &Tensor<E>,
) -> Result<(Gradients<E>, Tensor<E>)> {
    let d = cfg.down_blocks();
    let stages = cfg.upsampler_channels.len();
    let mut grads: Gradients<E> = BTreeMap::new();

    let mut g = sigmoid_backward(trace.up_pre.last().expect("upsampler stage"), upstream);
    for u in (0..stages).rev() {
        if u + 1 < stages {
            let (g_pre, g_alpha) = prelu_backward(
                &trace.up_pre[u],
                params.get(&format!("up{u}.act.alpha")),
                &g,
            )?;
            grads.insert(format!("up{u}.act.alpha"), g_alpha);
            g = g_pre;
        }
        let (g_in, g_w, g_b) = conv3d_backward(
            &trace.up_in[u],
            params.get(&format!("up{u}.conv.weight")),
            params.get(&format!("up{u}.conv.bias")),
            &g,
        )?;
        grads.insert(format!("up{u}.conv.weight"), g_w);
        grads.insert(format!("up{u}.conv.bias"), g_b);
        let prev_shape: Vec<usize> = if u == 0 {
            let m = &trace.mean_in_shape;
            vec![m[0], m[1], 1, m[3], m[4]]
        } else {
            trace.up_pre[u - 1].shape().to_vec()
        };
        g = nn_resize_backward(&prev_shape, (1, 2, 2), &g_in);
    }

    g = temporal_mean_backward(&trace.mean_in_shape, &g);

    // Skip gradients accumulate onto the encoder activations.
    let mut skip_grads: Vec<Option<Tensor<E>>> = (0..d).map(|_| None).collect();
    for j in (0..d).rev() {
        let (g_pre, g_alpha) =
            prelu_backward(&trace.dec_pre[j], params.get(&format!("dec{j}.act.alpha")), &g)?;
        grads.insert(format!("dec{j}.act.alpha"), g_alpha);
        let (g_cat, g_w, g_b) = conv3d_backward(
            &trace.dec_concat[j],
            params.get(&format!("dec{j}.conv.weight")),
            params.get(&format!("dec{j}.conv.bias")),
            &g_pre,
        )?;
        grads.insert(format!("dec{j}.conv.weight"), g_w);
        grads.insert(format!("dec{j}.conv.bias"), g_b);
        let (g_resized, g_skip) = split_channels(&g_cat, trace.dec_resized_c[j]);

        let skip_idx = d - 1 - j;
        let g_enc_act = avgpool3d_backward(
            trace.enc_act[skip_idx].shape(),
            (trace.dec_skip_factor[j], 1, 1),
            &g_skip,
        );
        skip_grads[skip_idx] = Some(g_enc_act);

        let tp_out_shape = {
            let s = &trace.dec_tp_in_shape[j];
            vec![s[0], s[1], s[2] / cfg.decoder_t_pool[j], s[3], s[4]]
        };
        let g_tp = nn_resize_backward(&tp_out_shape, (1, 2, 2), &g_resized);
        g = maxpool3d_backward(&trace.dec_tp_in_shape[j], &trace.dec_tp_argmax[j], &g_tp);
    }

    for i in (0..d).rev() {
        let mut g_act = maxpool3d_backward(trace.enc_act[i].shape(), &trace.enc_argmax[i], &g);
        if let Some(extra) = skip_grads[i].take() {
            g_act = g_act.add(&extra)?;
        }
        let (g_pre, g_alpha) =
            prelu_backward(&trace.enc_pre[i], params.get(&format!("enc{i}.act.alpha")), &g_act)?;
        grads.insert(format!("enc{i}.act.alpha"), g_alpha);
        let stage_in = if i == 0 { &trace.input } else { &trace.enc_pooled[i - 1] };
        let (g_in, g_w, g_b) = conv3d_backward(
            stage_in,
            params.get(&format!("enc{i}.conv.weight")),
            params.get(&format!("enc{i}.conv.bias")),
            &g_pre,
        )?;
        grads.insert(format!("enc{i}.conv.weight"), g_w);
        grads.insert(format!("enc{i}.conv.bias"), g_b);
        g = g_in;
    }
    Ok((grads, g))
}

/// Two-channel (real, imaginary) tensor view of a correlation block,
/// batch size one.
pub fn chi_to_input(block: &CorrelationBlock) -> Tensor<f32> {
    let (n_t, n_z, n_x) = (block.n_t, block.geom.n_z, block.geom.n_x);
    let mut t = Tensor::zeros(&[1, 2, n_t, n_z, n_x]);
    let plane = n_t * n_z * n_x;
    for (i, c) in block.data().iter().enumerate() {
        t.data_mut()[i] = c.re;
        t.data_mut()[plane + i] = c.im;
    }
    t
}

/// Pixelwise `probability > tau` on a single-sample map of shape
/// (1, 1, 1, n_z, n_x).
pub fn threshold_binarize(map: &Tensor<f32>, tau: f32) -> Result<TrackMask> {
    let s = map.shape();
    if s.len() != 5 || s[0] != 1 || s[1] != 1 || s[2] != 1 {
        return Err(Error::shape("(1, 1, 1, n_z, n_x)", format!("{s:?}")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside (0, 1)")));
    }
    let (n_z, n_x) = (s[3], s[4]);
    let mut mask = TrackMask::zeros(n_z, n_x);
    for z in 0..n_z {
        for x in 0..n_x {
            mask.set(z, x, map.data()[z * n_x + x] > tau);
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::check::{
        max_rel_error, numeric_gradient, random_tensor, weighted_sum, FD_STEP, FD_TOLERANCE,
    };
    use crate::rng::seeded;

    fn micro_config() -> ModelConfig {
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

    #[test]
    fn preset_configs_validate_and_close_shapes() {
        for cfg in [ModelConfig::paper(), ModelConfig::desk(), micro_config()] {
            cfg.validate().unwrap();
        }
        let mut bad = ModelConfig::desk();
        bad.n_t = 100; // not divisible by 4*4*2*2
        assert!(bad.validate().is_err());
        let mut bad = ModelConfig::desk();
        bad.upsampler_channels = vec![4, 2];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn desk_forward_produces_the_upscaled_map() {
        let cfg = ModelConfig::desk();
        let params = init_params(&cfg, 1).unwrap();
        let input = Tensor::zeros(&[1, 2, 128, 16, 16]);
        let (out, _) = model_forward(&params, &cfg, &input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 64, 64]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));

        let bad = Tensor::zeros(&[1, 2, 128, 16, 8]);
        assert!(model_forward(&params, &cfg, &bad).is_err());
    }

    #[test]
    fn paper_forward_produces_the_upscaled_map() {
        let cfg = ModelConfig::paper();
        let params = init_params(&cfg, 1).unwrap();
        let input = Tensor::zeros(&[1, 2, 512, 32, 32]);
        let (out, _) = model_forward(&params, &cfg, &input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 256, 256]);
    }

    #[test]
    fn zero_input_yields_a_constant_interior() {
        let cfg = ModelConfig::desk();
        let params = init_params(&cfg, 7).unwrap();
        let input = Tensor::zeros(&[1, 2, 128, 16, 16]);
        let (out, _) = model_forward(&params, &cfg, &input).unwrap();
        let n = 64usize;
        let center = out.data()[(n / 2) * n + n / 2];
        for z in n / 4..3 * n / 4 {
            for x in n / 4..3 * n / 4 {
                let v = out.data()[z * n + x];
                assert!(
                    (v - center).abs() < 1e-6,
                    "interior pixel ({z}, {x}) = {v} differs from {center}"
                );
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::desk();
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 3).unwrap();
        let c = init_params(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_finite());
    }

    /// Whole-network finite-difference check on a micro configuration:
    /// catches any mis-wired skip, pool, or resize adjoint that the
    /// per-layer checks cannot see.
    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = micro_config();
        let params64 = init_params(&cfg, 5).unwrap().cast::<f64>();
        let mut rng = seeded(6);
        let input = random_tensor(&[1, 2, 8, 4, 4], &mut rng, -1.0, 1.0);
        let weights = random_tensor(&[1, 1, 1, 8, 8], &mut rng, -1.0, 1.0);

        let (_, trace) = model_forward(&params64, &cfg, &input).unwrap();
        let (grads, g_input) = model_backward(&params64, &cfg, &trace, &weights).unwrap();

        let num_input = numeric_gradient(
            |x| weighted_sum(&model_forward(&params64, &cfg, x).unwrap().0, &weights),
            &input,
            FD_STEP,
        );
        assert!(
            max_rel_error(&g_input, &num_input) < FD_TOLERANCE,
            "input gradient error {}",
            max_rel_error(&g_input, &num_input)
        );

        for (name, analytic) in &grads {
            let mut probe = params64.clone();
            let base = probe.get(name).clone();
            let num = numeric_gradient(
                |t| {
                    probe.insert(name.clone(), t.clone());
                    weighted_sum(&model_forward(&probe, &cfg, &input).unwrap().0, &weights)
                },
                &base,
                FD_STEP,
            );
            let err = max_rel_error(analytic, &num);
            assert!(err < FD_TOLERANCE, "{name}: gradient error {err}");
        }
        assert_eq!(grads.len(), params64.len());
    }

    #[test]
    fn binarization_is_monotone_in_the_threshold() {
        let mut map = Tensor::zeros(&[1, 1, 1, 4, 4]);
        for (i, v) in map.data_mut().iter_mut().enumerate() {
            *v = i as f32 / 16.0;
        }
        let low = threshold_binarize(&map, 0.25).unwrap();
        let high = threshold_binarize(&map, 0.75).unwrap();
        assert!(low.count_ones() > high.count_ones());
        for z in 0..4 {
            for x in 0..4 {
                assert!(!high.get(z, x) || low.get(z, x));
            }
        }
        assert!(threshold_binarize(&map, 1.5).is_err());
    }
}
