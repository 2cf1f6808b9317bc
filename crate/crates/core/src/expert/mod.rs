//! Conventional localization baseline: bright local maxima on the
//! correlation magnitude, closed-form subpixel refinement, and accumulation
//! on the fine grid without tracking.

use crate::preprocess::CorrelationBlock;
use crate::vasculature::{BlockGeometry, TrackMask};
use crate::{Error, Result};
use rayon::prelude::*;
use std::path::Path;

pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.5;

/// One localized bubble. The position is continuous, inside the block
/// footprint; the magnitude is the peak correlation, above the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub z_um: f64,
    pub x_um: f64,
    pub magnitude: f64,
}

/// Strict maxima of the 3x3 neighborhood with magnitude above the
/// threshold. Border pixels never qualify; plateaus yield nothing.
pub fn detect_local_maxima(
    mag: &[f64],
    n_z: usize,
    n_x: usize,
    threshold: f64,
) -> Vec<(usize, usize)> {
    debug_assert_eq!(mag.len(), n_z * n_x);
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    let mut peaks = Vec::new();
    for z in 1..n_z.saturating_sub(1) {
        for x in 1..n_x - 1 {
            let center = mag[z * n_x + x];
            if center <= threshold {
                continue;
            }
            let strict = (-1i64..=1)
                .flat_map(|dz| (-1i64..=1).map(move |dx| (dz, dx)))
                .filter(|&d| d != (0, 0))
                .all(|(dz, dx)| {
                    mag[(z as i64 + dz) as usize * n_x + (x as i64 + dx) as usize] < center
                });
            if strict {
                peaks.push((z, x));
            }
        }
    }
    peaks
}

/// Continuous peak offset in pixel units, from separable three-point
/// parabola fits on the log magnitude. At a strict maximum the offsets are
/// inside (-0.5, 0.5) by construction; the clamp only binds on malformed
/// input. An axis is degenerate when a sample is nonpositive (log
/// undefined) or the log curvature is not strictly concave; it then
/// contributes offset zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubpixelFit {
    pub dz_px: f64,
    pub dx_px: f64,
    pub degenerate: bool,
}

pub fn subpixel_localize(
    mag: &[f64],
    n_z: usize,
    n_x: usize,
    peak: (usize, usize),
) -> SubpixelFit {
    debug_assert_eq!(mag.len(), n_z * n_x);
    let (z, x) = peak;
    debug_assert!(z >= 1 && z + 1 < n_z && x >= 1 && x + 1 < n_x);
    let axis = |m_minus: f64, m0: f64, m_plus: f64| -> (f64, bool) {
        if !(m_minus > 0.0 && m0 > 0.0 && m_plus > 0.0) {
            return (0.0, true);
        }
        let (a, b, c) = (m_minus.ln(), m0.ln(), m_plus.ln());
        let curvature = a - 2.0 * b + c;
        if !(curvature < 0.0) {
            return (0.0, true);
        }
        (((a - c) / (2.0 * curvature)).clamp(-0.5, 0.5), false)
    };
    let (dz, dz_bad) = axis(mag[(z - 1) * n_x + x], mag[z * n_x + x], mag[(z + 1) * n_x + x]);
    let (dx, dx_bad) = axis(mag[z * n_x + x - 1], mag[z * n_x + x], mag[z * n_x + x + 1]);
    SubpixelFit { dz_px: dz, dx_px: dx, degenerate: dz_bad || dx_bad }
}

/// Detect and refine every frame of the block. Frames are independent and
/// processed in parallel; the output is ordered by frame.
pub fn localize_block(block: &CorrelationBlock, threshold: f64) -> Vec<Detection> {
    let geom = block.geom;
    let (n_z, n_x) = (geom.n_z, geom.n_x);
    (0..block.n_t)
        .into_par_iter()
        .map(|t| {
            let mag: Vec<f64> = block.frame(t).iter().map(|c| c.norm() as f64).collect();
            detect_local_maxima(&mag, n_z, n_x, threshold)
                .into_iter()
                .map(|(pz, px)| {
                    let fit = subpixel_localize(&mag, n_z, n_x, (pz, px));
                    Detection {
                        frame: t as u32,
                        z_um: geom.origin_z_um + (pz as f64 + 0.5 + fit.dz_px) * geom.pitch_um,
                        x_um: geom.origin_x_um + (px as f64 + 0.5 + fit.dx_px) * geom.pitch_um,
                        magnitude: mag[pz * n_x + px],
                    }
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

/// Detection counts on the fine grid, and their binarization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDensityMap {
    pub n_z: usize,
    pub n_x: usize,
    counts: Vec<u32>,
}

impl BlockDensityMap {
    pub fn count(&self, z: usize, x: usize) -> u32 {
        self.counts[z * self.n_x + x]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Pointwise `count >= 1`.
    pub fn binarize(&self) -> TrackMask {
        let mut mask = TrackMask::zeros(self.n_z, self.n_x);
        for z in 0..self.n_z {
            for x in 0..self.n_x {
                mask.set(z, x, self.counts[z * self.n_x + x] >= 1);
            }
        }
        mask
    }
}

/// Bin detections into half-open [lo, hi) cells of the `upscale`-times
/// finer grid. Detections outside the footprint (possible only on
/// malformed input) are dropped.
pub fn accumulate_block(
    detections: &[Detection],
    geom: &BlockGeometry,
    upscale: usize,
) -> Result<BlockDensityMap> {
    if upscale == 0 || !upscale.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "upscale factor {upscale} is not a power of two"
        )));
    }
    let (n_z, n_x) = (geom.n_z * upscale, geom.n_x * upscale);
    let pitch = geom.pitch_um / upscale as f64;
    let mut counts = vec![0u32; n_z * n_x];
    for d in detections {
        let iz = ((d.z_um - geom.origin_z_um) / pitch).floor();
        let ix = ((d.x_um - geom.origin_x_um) / pitch).floor();
        if iz >= 0.0 && ix >= 0.0 && (iz as usize) < n_z && (ix as usize) < n_x {
            counts[iz as usize * n_x + ix as usize] += 1;
        }
    }
    Ok(BlockDensityMap { n_z, n_x, counts })
}

/// Plain-text export, one `frame z_um x_um magnitude` row per detection.
pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut out = String::from("# frame z_um x_um magnitude\n");
    for d in detections {
        out.push_str(&format!("{} {} {} {}\n", d.frame, d.z_um, d.x_um, d.magnitude));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::{
        compound, das_beamform, iq_demodulate, recording_window, simulate_channel_data,
        synthesize_psf, IQFrame, ProbeConfig, SequenceConfig,
    };
    use crate::preprocess::{assemble_block, correlation_map};
    use crate::rng::seeded;
    use crate::vasculature::Vec3;
    use rand::Rng as _;

    fn gaussian_frame(
        n_z: usize,
        n_x: usize,
        centers: &[(f64, f64)],
        sigma_px: f64,
    ) -> Vec<f64> {
        let mut mag = vec![0.0; n_z * n_x];
        for z in 0..n_z {
            for x in 0..n_x {
                for &(cz, cx) in centers {
                    let d2 = (z as f64 - cz).powi(2) + (x as f64 - cx).powi(2);
                    mag[z * n_x + x] += 0.9 * (-d2 / (2.0 * sigma_px * sigma_px)).exp();
                }
            }
        }
        mag
    }

    #[test]
    fn single_blob_yields_one_detection_at_its_peak() {
        let mag = gaussian_frame(15, 15, &[(7.0, 9.0)], 1.3);
        let peaks = detect_local_maxima(&mag, 15, 15, 0.5);
        assert_eq!(peaks, vec![(7, 9)]);
    }

    #[test]
    fn constant_frame_has_no_strict_maxima() {
        let mag = vec![0.9; 10 * 10];
        assert!(detect_local_maxima(&mag, 10, 10, 0.5).is_empty());
    }

    #[test]
    fn well_separated_blobs_are_both_found() {
        let mag = gaussian_frame(20, 20, &[(5.0, 5.0), (14.0, 15.0)], 1.3);
        let peaks = detect_local_maxima(&mag, 20, 20, 0.5);
        assert_eq!(peaks, vec![(5, 5), (14, 15)]);
    }

    #[test]
    fn raising_the_threshold_never_adds_detections() {
        let mut rng = seeded(3);
        let mag: Vec<f64> = (0..30 * 30).map(|_| rng.random_range(0.0..1.0)).collect();
        let counts: Vec<usize> = (1..20)
            .map(|k| detect_local_maxima(&mag, 30, 30, k as f64 * 0.05).len())
            .collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        assert!(counts[0] > 0);
    }

    #[test]
    fn centered_gaussian_fits_zero_offset() {
        let mag = gaussian_frame(9, 9, &[(4.0, 4.0)], 1.1);
        let fit = subpixel_localize(&mag, 9, 9, (4, 4));
        assert!(!fit.degenerate);
        assert!(fit.dz_px.abs() < 1e-12 && fit.dx_px.abs() < 1e-12);
    }

    #[test]
    fn log_parabola_is_exact_on_a_true_gaussian() {
        // The log of a Gaussian is itself a parabola, so the three-point fit
        // recovers the center exactly up to rounding.
        let mag = gaussian_frame(9, 9, &[(3.8, 4.3)], 1.1);
        let fit = subpixel_localize(&mag, 9, 9, (4, 4));
        assert!(!fit.degenerate);
        assert!((fit.dz_px - (-0.2)).abs() < 1e-9, "dz {}", fit.dz_px);
        assert!((fit.dx_px - 0.3).abs() < 1e-9, "dx {}", fit.dx_px);
    }

    #[test]
    fn flat_patch_falls_back_to_the_pixel_center() {
        let mag = vec![0.7; 9];
        let fit = subpixel_localize(&mag, 3, 3, (1, 1));
        assert!(fit.degenerate);
        assert_eq!((fit.dz_px, fit.dx_px), (0.0, 0.0));
    }

    /// Full-pipeline block with known scatterer positions per frame.
    fn simulated_block(per_frame: &[Vec<(Vec3, f64)>], geom: BlockGeometry) -> CorrelationBlock {
        let probe = ProbeConfig { n_elements: 48, ..ProbeConfig::default() };
        let seq = SequenceConfig::default();
        let psf = synthesize_psf(&probe, &seq, (7, 7)).unwrap();
        let window = recording_window(&probe, &seq, &geom);
        let frames: Vec<IQFrame> = per_frame
            .iter()
            .map(|scatterers| {
                let angle_frames: Vec<IQFrame> = seq
                    .angles_deg
                    .iter()
                    .map(|&angle| {
                        let rf =
                            simulate_channel_data(scatterers, &probe, &seq, angle, window).unwrap();
                        let iq = iq_demodulate(&rf, probe.center_freq_hz, seq.decimation).unwrap();
                        das_beamform(&iq, &probe, angle, &geom)
                    })
                    .collect();
                correlation_map(&compound(&angle_frames).unwrap(), &psf)
            })
            .collect();
        assemble_block(&frames, 0, frames.len()).unwrap()
    }

    #[test]
    fn slowly_moving_bubble_is_tracked_with_subpixel_accuracy() {
        let geom = BlockGeometry {
            origin_z_um: 2800.0,
            origin_x_um: -150.0,
            n_z: 12,
            n_x: 12,
            pitch_um: 25.0,
        };
        let n_t = 12;
        let truth: Vec<Vec3> = (0..n_t)
            .map(|t| Vec3::new(-57.0 + 3.1 * t as f64, 0.0, 2951.0 + 1.7 * t as f64))
            .collect();
        let per_frame: Vec<Vec<(Vec3, f64)>> = truth.iter().map(|&p| vec![(p, 1.0)]).collect();
        let block = simulated_block(&per_frame, geom);

        let detections = localize_block(&block, DEFAULT_DETECTION_THRESHOLD);
        assert!(detections.len() >= (0.9 * n_t as f64) as usize, "{} hits", detections.len());
        let mut sq_sum = 0.0;
        for d in &detections {
            let p = truth[d.frame as usize];
            sq_sum += (d.z_um - p.z).powi(2) + (d.x_um - p.x).powi(2);
        }
        let rms = (sq_sum / detections.len() as f64).sqrt();
        assert!(rms < 10.0, "rms localization error {rms} um");
    }

    #[test]
    fn empty_block_yields_no_detections() {
        let geom = BlockGeometry {
            origin_z_um: 2800.0,
            origin_x_um: -150.0,
            n_z: 12,
            n_x: 12,
            pitch_um: 25.0,
        };
        let per_frame: Vec<Vec<(Vec3, f64)>> = (0..4).map(|_| Vec::new()).collect();
        let block = simulated_block(&per_frame, geom);
        assert!(localize_block(&block, DEFAULT_DETECTION_THRESHOLD).is_empty());
    }

    #[test]
    fn bubbles_inside_one_psf_width_may_merge_but_never_multiply() {
        let geom = BlockGeometry {
            origin_z_um: 2800.0,
            origin_x_um: -150.0,
            n_z: 12,
            n_x: 12,
            pitch_um: 25.0,
        };
        // 60 um apart laterally: under the lateral PSF width at this depth.
        // The midpoint sits off the pixel lattice so the merged blob cannot
        // tie two neighboring pixels exactly.
        let per_frame: Vec<Vec<(Vec3, f64)>> = (0..6)
            .map(|t| {
                let z = 2950.0 + 2.0 * t as f64;
                vec![
                    (Vec3::new(-36.0, 0.0, z), 1.0),
                    (Vec3::new(24.0, 0.0, z), 1.0),
                ]
            })
            .collect();
        let block = simulated_block(&per_frame, geom);
        let detections = localize_block(&block, DEFAULT_DETECTION_THRESHOLD);
        assert!(!detections.is_empty());
        for t in 0..6u32 {
            let per_frame = detections.iter().filter(|d| d.frame == t).count();
            assert!(per_frame <= 2, "frame {t} produced {per_frame} detections");
        }
    }

    #[test]
    fn accumulation_uses_half_open_bins() {
        let geom =
            BlockGeometry { origin_z_um: 0.0, origin_x_um: 0.0, n_z: 4, n_x: 4, pitch_um: 25.0 };
        // Fine pitch 6.25 um; the third detection sits exactly on a bin edge
        // and must land in the upper bin.
        let detections = vec![
            Detection { frame: 0, z_um: 10.0, x_um: 10.0, magnitude: 0.9 },
            Detection { frame: 1, z_um: 10.0, x_um: 10.0, magnitude: 0.8 },
            Detection { frame: 2, z_um: 12.5, x_um: 6.25, magnitude: 0.7 },
        ];
        let map = accumulate_block(&detections, &geom, 4).unwrap();
        assert_eq!((map.n_z, map.n_x), (16, 16));
        assert_eq!(map.count(1, 1), 2);
        assert_eq!(map.count(2, 1), 1);
        assert_eq!(map.counts().iter().sum::<u32>(), 3);

        let mask = map.binarize();
        assert_eq!(mask.count_ones(), 2);
        assert!(mask.get(1, 1) && mask.get(2, 1));

        assert!(accumulate_block(&detections, &geom, 3).is_err());
    }

    #[test]
    fn detections_export_as_readable_rows() {
        let dir = std::env::temp_dir().join("ulm_expert_export");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("detections.txt");
        let detections = vec![
            Detection { frame: 0, z_um: 2950.5, x_um: -51.25, magnitude: 0.875 },
            Detection { frame: 3, z_um: 2960.0, x_um: -48.0, magnitude: 0.75 },
        ];
        write_detections(&path, &detections).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 2);
        let fields: Vec<f64> = rows[0].split(' ').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields, vec![0.0, 2950.5, -51.25, 0.875]);
    }
}
