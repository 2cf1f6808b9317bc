//! Matched-filter correlation of beamformed frames with the impulse
//! response patch.

use crate::acoustics::{IQFrame, PSFPatch};
use num_complex::Complex64;

/// Patch-norm floor; keeps empty neighborhoods at exactly zero correlation.
const NORM_FLOOR: f64 = 1e-12;

/// Normalized complex correlation: at every pixel, the inner product of the
/// zero-padded neighborhood with the unit-norm patch, divided by the
/// neighborhood norm. Magnitudes never exceed 1 (Cauchy-Schwarz).
pub fn correlation_map(frame: &IQFrame, psf: &PSFPatch) -> IQFrame {
    let (n_z, n_x) = (frame.geom.n_z, frame.geom.n_x);
    let (hz, hx) = (psf.n_z as isize / 2, psf.n_x as isize / 2);
    let mut out = IQFrame::zeros(frame.geom);
    for z in 0..n_z as isize {
        for x in 0..n_x as isize {
            let mut inner = Complex64::new(0.0, 0.0);
            let mut norm_sq = 0.0f64;
            for dz in -hz..=hz {
                let fz = z + dz;
                if fz < 0 || fz >= n_z as isize {
                    continue;
                }
                for dx in -hx..=hx {
                    let fx = x + dx;
                    if fx < 0 || fx >= n_x as isize {
                        continue;
                    }
                    let v = frame.get(fz as usize, fx as usize);
                    let p = psf.get((dz + hz) as usize, (dx + hx) as usize);
                    inner += v * p.conj();
                    norm_sq += v.norm_sqr();
                }
            }
            out.set(z as usize, x as usize, inner / norm_sq.sqrt().max(NORM_FLOOR));
        }
    }
    out
}
