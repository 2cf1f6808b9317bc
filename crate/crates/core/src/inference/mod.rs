//! Whole-field reconstruction with a trained network: sliding-window
//! inference with margin cropping and OR-merge, angiogram accumulation,
//! rigid registration of block outputs, and grayscale export.

use crate::neural::{model_forward, threshold_binarize, ModelConfig, ModelParams, Tensor};
use crate::preprocess::CorrelationBlock;
use crate::vasculature::TrackMask;
use crate::{Error, Result};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::io::Write as _;
use std::path::Path;

/// Spatial tiling of a field larger than the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    /// Window size in coarse pixels; must equal the model input (n_z, n_x).
    pub window: (usize, usize),
    /// Stride between window origins, coarse pixels.
    pub stride: usize,
    /// Crop this many fine-grid pixels from each side of a window's output
    /// before merging, discarding convolution edge effects.
    pub crop_margin: usize,
}

impl WindowPlan {
    /// Laptop-scale default: half-window stride, one-eighth output margin.
    pub fn desk(cfg: &ModelConfig) -> WindowPlan {
        let out = cfg.upscale as usize * cfg.n_z;
        WindowPlan {
            window: (cfg.n_z, cfg.n_x),
            stride: (cfg.n_z / 2).max(1),
            crop_margin: out / 8,
        }
    }

    /// The dense plan from the reference setup: stride 2, margin 32.
    pub fn paper(cfg: &ModelConfig) -> WindowPlan {
        WindowPlan { window: (cfg.n_z, cfg.n_x), stride: 2, crop_margin: 32 }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.window != (cfg.n_z, cfg.n_x) {
            return Err(Error::shape(
                format!("window ({}, {})", cfg.n_z, cfg.n_x),
                format!("({}, {})", self.window.0, self.window.1),
            ));
        }
        if self.stride == 0 {
            return Err(Error::Config("window stride must be at least 1".into()));
        }
        let r = cfg.upscale as usize;
        let half_out = r * self.window.0.min(self.window.1) / 2;
        if self.crop_margin >= half_out {
            return Err(Error::Config(format!(
                "crop margin {} must stay below half the output window ({half_out})",
                self.crop_margin
            )));
        }
        Ok(())
    }
}

/// Window origins along one axis: multiples of the stride, plus a final
/// origin flush against the far border so the whole extent is covered.
pub fn window_starts(field: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> =
        (0..).map(|i| i * stride).take_while(|&p| p + window <= field).collect();
    if let Some(&last) = starts.last() {
        if last + window < field {
            starts.push(field - window);
        }
    }
    starts
}

fn window_input(field: &CorrelationBlock, pz: usize, px: usize, wz: usize, wx: usize) -> Tensor<f32> {
    let (n_t, nx) = (field.n_t, field.geom.n_x);
    let nz = field.geom.n_z;
    let mut t = Tensor::zeros(&[1, 2, n_t, wz, wx]);
    let plane = n_t * wz * wx;
    for ti in 0..n_t {
        for z in 0..wz {
            for x in 0..wx {
                let c = field.data()[ti * nz * nx + (pz + z) * nx + (px + x)];
                let o = (ti * wz + z) * wx + x;
                t.data_mut()[o] = c.re;
                t.data_mut()[plane + o] = c.im;
            }
        }
    }
    t
}

/// Tile the model over a field of view, binarize each window at the model
/// threshold, crop the margin, and merge by logical OR. Returns the merged
/// mask and the coverage map; pixels the plan never covers (the outer
/// border) stay zero in the coverage mask.
pub fn sliding_window_infer(
    field: &CorrelationBlock,
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    plan: &WindowPlan,
) -> Result<(TrackMask, TrackMask)> {
    cfg.validate()?;
    plan.validate(cfg)?;
    let (wz, wx) = plan.window;
    let (nz, nx) = (field.geom.n_z, field.geom.n_x);
    if field.n_t != cfg.n_t || nz < wz || nx < wx {
        return Err(Error::shape(
            format!("field of at least {wz}x{wx} pixels over {} frames", cfg.n_t),
            format!("{nz}x{nx} over {} frames", field.n_t),
        ));
    }
    let r = cfg.upscale as usize;
    let m = plan.crop_margin;
    let coords: Vec<(usize, usize)> = window_starts(nz, wz, plan.stride)
        .into_iter()
        .flat_map(|pz| window_starts(nx, wx, plan.stride).into_iter().map(move |px| (pz, px)))
        .collect();

    let outputs = coords
        .par_iter()
        .map(|&(pz, px)| {
            let input = window_input(field, pz, px, wz, wx);
            let (out, _) = model_forward(params, cfg, &input)?;
            Ok((pz, px, threshold_binarize(&out, cfg.threshold)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut merged = TrackMask::zeros(r * nz, r * nx);
    let mut coverage = TrackMask::zeros(r * nz, r * nx);
    for (pz, px, mask) in outputs {
        for z in m..r * wz - m {
            for x in m..r * wx - m {
                let (gz, gx) = (r * pz + z, r * px + x);
                coverage.set(gz, gx, true);
                if mask.get(z, x) {
                    merged.set(gz, gx, true);
                }
            }
        }
    }
    Ok((merged, coverage))
}

/// Per-pixel count of how many block masks marked a track there.
#[derive(Debug, Clone, PartialEq)]
pub struct Angiogram {
    pub n_z: usize,
    pub n_x: usize,
    pub n_blocks: usize,
    counts: Vec<u32>,
}

impl Angiogram {
    pub fn zeros(n_z: usize, n_x: usize) -> Angiogram {
        Angiogram { n_z, n_x, n_blocks: 0, counts: vec![0; n_z * n_x] }
    }

    /// Rebuild from stored counts, e.g. when loading a persisted map.
    pub fn from_counts(
        n_z: usize,
        n_x: usize,
        n_blocks: usize,
        counts: Vec<u32>,
    ) -> Result<Angiogram> {
        if counts.len() != n_z * n_x {
            return Err(Error::shape(format!("{} counts", n_z * n_x), counts.len()));
        }
        Ok(Angiogram { n_z, n_x, n_blocks, counts })
    }

    pub fn accumulate(&mut self, mask: &TrackMask) -> Result<()> {
        if mask.n_z != self.n_z || mask.n_x != self.n_x {
            return Err(Error::shape(
                format!("{}x{}", self.n_z, self.n_x),
                format!("{}x{}", mask.n_z, mask.n_x),
            ));
        }
        self.accumulate_at(mask, 0, 0)
    }

    /// Add one block mask with its top-left corner at `(z0, x0)`. The whole
    /// footprint must lie inside the accumulation grid.
    pub fn accumulate_at(&mut self, mask: &TrackMask, z0: usize, x0: usize) -> Result<()> {
        if z0 + mask.n_z > self.n_z || x0 + mask.n_x > self.n_x {
            return Err(Error::shape(
                format!("footprint inside {}x{}", self.n_z, self.n_x),
                format!("{}x{} at ({z0}, {x0})", mask.n_z, mask.n_x),
            ));
        }
        for z in 0..mask.n_z {
            let row = (z0 + z) * self.n_x + x0;
            for x in 0..mask.n_x {
                self.counts[row + x] += mask.get(z, x) as u32;
            }
        }
        self.n_blocks += 1;
        Ok(())
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, z: usize, x: usize) -> u32 {
        self.counts[z * self.n_x + x]
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Every pixel any block ever marked.
    pub fn binarize(&self) -> TrackMask {
        let mut mask = TrackMask::zeros(self.n_z, self.n_x);
        for z in 0..self.n_z {
            for x in 0..self.n_x {
                mask.set(z, x, self.count(z, x) > 0);
            }
        }
        mask
    }
}

/// Pixelwise integer sum of binary block outputs.
pub fn accumulate_angiogram(masks: &[TrackMask]) -> Result<Angiogram> {
    let first = masks.first().ok_or_else(|| {
        Error::InvalidArgument("angiogram accumulation needs at least one mask".into())
    })?;
    let mut angio = Angiogram::zeros(first.n_z, first.n_x);
    for mask in masks {
        angio.accumulate(mask)?;
    }
    Ok(angio)
}

/// Dense 2D image, row-major, depth-major rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub n_z: usize,
    pub n_x: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn zeros(n_z: usize, n_x: usize) -> Image2D {
        Image2D { n_z, n_x, data: vec![0.0; n_z * n_x] }
    }

    pub fn from_mask(mask: &TrackMask) -> Image2D {
        Image2D {
            n_z: mask.n_z,
            n_x: mask.n_x,
            data: mask.as_bytes().iter().map(|&b| b as f64).collect(),
        }
    }

    pub fn from_angiogram(angio: &Angiogram) -> Image2D {
        Image2D {
            n_z: angio.n_z,
            n_x: angio.n_x,
            data: angio.counts().iter().map(|&c| c as f64).collect(),
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, z: usize, x: usize) -> f64 {
        self.data[z * self.n_x + x]
    }

    pub fn set(&mut self, z: usize, x: usize, v: f64) {
        self.data[z * self.n_x + x] = v;
    }
}

/// Translate by an integer offset with zero fill.
pub fn shift_image(img: &Image2D, dz: i64, dx: i64) -> Image2D {
    let mut out = Image2D::zeros(img.n_z, img.n_x);
    for z in 0..img.n_z {
        for x in 0..img.n_x {
            let (sz, sx) = (z as i64 - dz, x as i64 - dx);
            if sz >= 0 && sx >= 0 && (sz as usize) < img.n_z && (sx as usize) < img.n_x {
                out.set(z, x, img.get(sz as usize, sx as usize));
            }
        }
    }
    out
}

fn fft2d(data: &mut [Complex64], n_z: usize, n_x: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft =
        if inverse { planner.plan_fft_inverse(n_x) } else { planner.plan_fft_forward(n_x) };
    for row in data.chunks_exact_mut(n_x) {
        row_fft.process(row);
    }
    let col_fft =
        if inverse { planner.plan_fft_inverse(n_z) } else { planner.plan_fft_forward(n_z) };
    let mut col = vec![Complex64::new(0.0, 0.0); n_z];
    for x in 0..n_x {
        for z in 0..n_z {
            col[z] = data[z * n_x + x];
        }
        col_fft.process(&mut col);
        for z in 0..n_z {
            data[z * n_x + x] = col[z];
        }
    }
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub shift_z: i64,
    pub shift_x: i64,
    /// True when either input had no energy; the shift is then (0, 0) and
    /// the moving image is returned unshifted.
    pub degenerate: bool,
    pub registered: Image2D,
}

/// Phase-correlation estimate of the integer translation taking the
/// reference onto the moving image; the returned image is the moving one
/// shifted back by that amount (zero fill).
pub fn rigid_register(reference: &Image2D, moving: &Image2D) -> Result<Registration> {
    if reference.n_z != moving.n_z || reference.n_x != moving.n_x {
        return Err(Error::shape(
            format!("{}x{}", reference.n_z, reference.n_x),
            format!("{}x{}", moving.n_z, moving.n_x),
        ));
    }
    let (nz, nx) = (reference.n_z, reference.n_x);
    let energy = |img: &Image2D| img.data().iter().map(|v| v * v).sum::<f64>();
    if energy(reference) == 0.0 || energy(moving) == 0.0 {
        return Ok(Registration {
            shift_z: 0,
            shift_x: 0,
            degenerate: true,
            registered: moving.clone(),
        });
    }

    let to_complex =
        |img: &Image2D| img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>();
    let mut f_ref = to_complex(reference);
    let mut f_mov = to_complex(moving);
    fft2d(&mut f_ref, nz, nx, false);
    fft2d(&mut f_mov, nz, nx, false);

    // Moving = reference translated by d puts the correlation peak at +d.
    let mut cross: Vec<Complex64> = f_ref
        .iter()
        .zip(&f_mov)
        .map(|(a, b)| {
            let c = b * a.conj();
            let mag = c.norm();
            if mag > 1e-12 { c / mag } else { Complex64::new(0.0, 0.0) }
        })
        .collect();
    fft2d(&mut cross, nz, nx, true);

    let peak = cross
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.re.partial_cmp(&b.1.re).expect("finite correlation"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (pz, px) = (peak / nx, peak % nx);
    // The correlation peak sits at (shift mod size); fold to signed offsets.
    let fold = |p: usize, n: usize| -> i64 {
        if p > n / 2 { p as i64 - n as i64 } else { p as i64 }
    };
    let shift_z = fold(pz, nz);
    let shift_x = fold(px, nx);
    Ok(Registration {
        shift_z,
        shift_x,
        degenerate: false,
        registered: shift_image(moving, -shift_z, -shift_x),
    })
}

/// 16-bit grayscale view of the counts, optionally compressed as
/// log(1 + count) before normalizing to full scale.
pub fn render_density_image(angio: &Angiogram, log_compress: bool) -> Vec<u16> {
    let peak = angio.max_count();
    if peak == 0 {
        return vec![0; angio.n_z * angio.n_x];
    }
    let scale = if log_compress { (1.0 + peak as f64).ln() } else { peak as f64 };
    angio
        .counts()
        .iter()
        .map(|&c| {
            let v = if log_compress { (1.0 + c as f64).ln() } else { c as f64 };
            (v / scale * f64::from(u16::MAX)).round() as u16
        })
        .collect()
}

/// Binary portable graymap, 16-bit big-endian samples.
pub fn write_pgm16(path: &Path, n_rows: usize, n_cols: usize, pixels: &[u16]) -> Result<()> {
    if pixels.len() != n_rows * n_cols {
        return Err(Error::shape(n_rows * n_cols, pixels.len()));
    }
    let mut buf = Vec::with_capacity(pixels.len() * 2 + 32);
    write!(buf, "P5\n{n_cols} {n_rows}\n65535\n").expect("vec write");
    for &p in pixels {
        buf.extend_from_slice(&p.to_be_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Write `<stem>.pgm` plus a `<stem>.txt` sidecar recording the geometry.
pub fn write_angiogram_image(
    stem: &Path,
    angio: &Angiogram,
    upscale: u32,
    fine_pitch_um: f64,
    log_compress: bool,
) -> Result<()> {
    let pixels = render_density_image(angio, log_compress);
    write_pgm16(&stem.with_extension("pgm"), angio.n_z, angio.n_x, &pixels)?;
    let sidecar = format!(
        "n_z {}\nn_x {}\nupscale {}\nn_blocks {}\npitch_um {}\nlog_compressed {}\n",
        angio.n_z, angio.n_x, upscale, angio.n_blocks, fine_pitch_um, log_compress
    );
    let path = stem.with_extension("txt");
    std::fs::write(&path, sidecar).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_params;
    use crate::vasculature::BlockGeometry;
    use num_complex::Complex32;
    use rand::Rng as _;

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

    fn constant_field(cfg: &ModelConfig, nz: usize, nx: usize, value: Complex32) -> CorrelationBlock {
        let geom = BlockGeometry {
            origin_z_um: 0.0,
            origin_x_um: 0.0,
            n_z: nz,
            n_x: nx,
            pitch_um: 25.0,
        };
        CorrelationBlock::from_data(cfg.n_t, geom, vec![value; cfg.n_t * nz * nx]).unwrap()
    }

    #[test]
    fn window_grid_matches_stride_arithmetic() {
        assert_eq!(window_starts(64, 32, 2).len(), 17);
        assert_eq!(window_starts(64, 32, 2)[16], 32);
        assert_eq!(window_starts(10, 4, 3), vec![0, 3, 6]);
        // A trailing remainder gets a flush window.
        assert_eq!(window_starts(11, 4, 3), vec![0, 3, 6, 7]);
        assert_eq!(window_starts(4, 4, 5), vec![0]);
    }

    #[test]
    fn single_window_field_matches_direct_inference() {
        let cfg = micro_config();
        let params = init_params(&cfg, 17).unwrap();
        let mut rng = crate::rng::seeded(3);
        let data: Vec<Complex32> = (0..cfg.n_t * 16)
            .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let geom = BlockGeometry {
            origin_z_um: 0.0,
            origin_x_um: 0.0,
            n_z: 4,
            n_x: 4,
            pitch_um: 25.0,
        };
        let field = CorrelationBlock::from_data(cfg.n_t, geom, data).unwrap();
        let plan = WindowPlan { window: (4, 4), stride: 1, crop_margin: 1 };
        let (merged, coverage) = sliding_window_infer(&field, &params, &cfg, &plan).unwrap();

        let input = window_input(&field, 0, 0, 4, 4);
        let (out, _) = model_forward(&params, &cfg, &input).unwrap();
        let direct = threshold_binarize(&out, cfg.threshold).unwrap();
        for z in 0..8 {
            for x in 0..8 {
                let interior = (1..7).contains(&z) && (1..7).contains(&x);
                assert_eq!(coverage.get(z, x), interior);
                assert_eq!(merged.get(z, x), interior && direct.get(z, x));
            }
        }

        let small = constant_field(&cfg, 3, 4, Complex32::new(0.1, 0.0));
        assert!(sliding_window_infer(&small, &params, &cfg, &plan).is_err());
    }

    #[test]
    fn constant_field_mosaic_tiles_one_window_output() {
        let cfg = micro_config();
        let mut params = init_params(&cfg, 29).unwrap();
        // Freshly initialized weights leave every output hovering at 0.5;
        // bias the head so binarization against the 0.5 threshold is firm.
        params.insert("up0.conv.bias".into(), Tensor::from_vec(&[1], vec![0.4f32]).unwrap());
        let field = constant_field(&cfg, 8, 8, Complex32::new(0.4, -0.3));
        let plan = WindowPlan { window: (4, 4), stride: 2, crop_margin: 3 };
        let (merged, coverage) = sliding_window_infer(&field, &params, &cfg, &plan).unwrap();

        let input = window_input(&field, 0, 0, 4, 4);
        let (out, _) = model_forward(&params, &cfg, &input).unwrap();
        // Every window sees the same input, so each contributes the same
        // cropped patch. The patch pixels must binarize decisively to one
        // shared bit for the tiling comparison to be meaningful.
        let reference = out.data()[3 * 8 + 3] > cfg.threshold;
        for z in 3..5 {
            for x in 3..5 {
                let v = out.data()[z * 8 + x];
                assert!((v - cfg.threshold).abs() > 1e-3, "indecisive pixel ({z}, {x}): {v}");
                assert_eq!(v > cfg.threshold, reference);
            }
        }

        let mut covered = 0;
        for z in 0..16 {
            for x in 0..16 {
                if coverage.get(z, x) {
                    covered += 1;
                    assert_eq!(merged.get(z, x), reference, "pixel ({z}, {x})");
                }
            }
        }
        assert!(covered > 0);
        assert!(!coverage.get(0, 0), "the outer border is never covered");
    }

    #[test]
    fn angiogram_accumulation_is_integer_exact() {
        let mut a = TrackMask::zeros(3, 3);
        a.set(0, 0, true);
        a.set(1, 2, true);
        let mut b = TrackMask::zeros(3, 3);
        b.set(1, 2, true);

        let single = accumulate_angiogram(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.count(0, 0), 1);
        assert_eq!(single.count(1, 2), 1);
        assert_eq!(single.count(2, 2), 0);
        assert_eq!(single.n_blocks, 1);

        let repeated = accumulate_angiogram(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(repeated.count(0, 0), 3);
        assert_eq!(repeated.max_count(), 3);

        let ab = accumulate_angiogram(&[a.clone(), b.clone()]).unwrap();
        let ba = accumulate_angiogram(&[b, a.clone()]).unwrap();
        assert_eq!(ab.counts(), ba.counts());
        assert_eq!(ab.count(1, 2), 2);

        let odd = TrackMask::zeros(2, 3);
        assert!(accumulate_angiogram(&[TrackMask::zeros(3, 3), odd]).is_err());

        // Offset placement lands on the shifted pixels and checks bounds.
        let mut wide = Angiogram::zeros(4, 5);
        wide.accumulate_at(&a, 1, 2).unwrap();
        assert_eq!(wide.count(1, 2), 1);
        assert_eq!(wide.count(2, 4), 1);
        assert_eq!(wide.count(0, 0), 0);
        assert_eq!(wide.binarize().count_ones(), 2);
        assert!(wide.accumulate_at(&a, 2, 2).is_err());
    }

    fn sparse_image(n: usize, seed: u64) -> Image2D {
        let mut rng = crate::rng::seeded(seed);
        let mut img = Image2D::zeros(n, n);
        for _ in 0..20 {
            let z = rng.random_range(n / 4..3 * n / 4);
            let x = rng.random_range(n / 4..3 * n / 4);
            img.set(z, x, rng.random_range(0.5..2.0));
        }
        img
    }

    #[test]
    fn registration_recovers_constructed_shifts_exactly() {
        let img = sparse_image(64, 5);
        let same = rigid_register(&img, &img).unwrap();
        assert_eq!((same.shift_z, same.shift_x), (0, 0));
        assert!(!same.degenerate);

        for (dz, dx) in [(3i64, -5i64), (16, -16), (-16, 16), (0, 9)] {
            let moved = shift_image(&img, dz, dx);
            let reg = rigid_register(&img, &moved).unwrap();
            assert_eq!((reg.shift_z, reg.shift_x), (dz, dx), "shift ({dz}, {dx})");
            // Registered content matches the reference wherever both exist.
            for z in 0..64 {
                for x in 0..64 {
                    if reg.registered.get(z, x) != 0.0 {
                        assert_eq!(reg.registered.get(z, x), img.get(z, x));
                    }
                }
            }
        }

        let zero = Image2D::zeros(64, 64);
        let degenerate = rigid_register(&img, &zero).unwrap();
        assert!(degenerate.degenerate);
        assert_eq!((degenerate.shift_z, degenerate.shift_x), (0, 0));
    }

    #[test]
    fn registration_doubles_the_peak_of_a_shifted_spot_pair() {
        let mut img = Image2D::zeros(32, 32);
        img.set(16, 16, 1.0);
        let moved = shift_image(&img, 4, -3);

        let unregistered_peak = img
            .data()
            .iter()
            .zip(moved.data())
            .map(|(a, b)| a + b)
            .fold(0.0f64, f64::max);
        let reg = rigid_register(&img, &moved).unwrap();
        let registered_peak = img
            .data()
            .iter()
            .zip(reg.registered.data())
            .map(|(a, b)| a + b)
            .fold(0.0f64, f64::max);
        assert!(registered_peak >= 1.9 * unregistered_peak);
    }

    #[test]
    fn density_rendering_is_monotone_and_log_scaled() {
        let mut angio = Angiogram::zeros(2, 2);
        let mut m1 = TrackMask::zeros(2, 2);
        m1.set(0, 1, true);
        m1.set(1, 0, true);
        m1.set(1, 1, true);
        let mut m2 = TrackMask::zeros(2, 2);
        m2.set(1, 1, true);
        for _ in 0..4 {
            angio.accumulate(&m2).unwrap();
        }
        angio.accumulate(&m1).unwrap();
        // counts: [0, 1, 1, 5]
        let log = render_density_image(&angio, true);
        let linear = render_density_image(&angio, false);
        assert_eq!(log[0], 0);
        assert_eq!(log[3], u16::MAX);
        assert_eq!(linear[3], u16::MAX);
        assert!(log[1] > linear[1], "log compression lifts low counts");
        let expected = ((2.0f64.ln() / 6.0f64.ln()) * 65535.0).round() as u16;
        assert_eq!(log[1], expected);
        assert!(log[1] <= log[3]);

        let empty = render_density_image(&Angiogram::zeros(2, 2), true);
        assert!(empty.iter().all(|&v| v == 0));
    }

    #[test]
    fn pgm_export_is_big_endian_with_a_sidecar() {
        let dir = std::env::temp_dir().join("ulm_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("angio");

        let mut angio = Angiogram::zeros(2, 3);
        let mut mask = TrackMask::zeros(2, 3);
        mask.set(0, 2, true);
        angio.accumulate(&mask).unwrap();
        write_angiogram_image(&stem, &angio, 4, 6.25, true).unwrap();

        let bytes = std::fs::read(stem.with_extension("pgm")).unwrap();
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let payload = &bytes[header.len()..];
        assert_eq!(payload.len(), 12);
        assert_eq!(&payload[4..6], &u16::MAX.to_be_bytes());
        assert!(payload[..4].iter().all(|&b| b == 0));

        let sidecar = std::fs::read_to_string(stem.with_extension("txt")).unwrap();
        for needle in ["n_z 2", "n_x 3", "upscale 4", "n_blocks 1", "pitch_um 6.25"] {
            assert!(sidecar.contains(needle), "missing {needle}");
        }
    }
}
