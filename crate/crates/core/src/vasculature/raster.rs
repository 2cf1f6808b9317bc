//! Ground-truth masks: trajectory segments projected onto the imaging plane
//! and drawn onto the upsampled pixel grid.

use super::{Trajectory, Vec3};
use crate::{Error, Result};

/// Placement of a data block on the imaging plane. `pitch_um` is the
/// beamforming grid pitch; masks refine it by the upscale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockGeometry {
    pub origin_z_um: f64,
    pub origin_x_um: f64,
    pub n_z: usize,
    pub n_x: usize,
    pub pitch_um: f64,
}

impl BlockGeometry {
    pub fn extent_z_um(&self) -> f64 {
        self.n_z as f64 * self.pitch_um
    }

    pub fn extent_x_um(&self) -> f64 {
        self.n_x as f64 * self.pitch_um
    }
}

/// Binary image, row-major, one byte per pixel (0 or 1). Row index is depth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackMask {
    pub n_z: usize,
    pub n_x: usize,
    data: Vec<u8>,
}

impl TrackMask {
    pub fn zeros(n_z: usize, n_x: usize) -> TrackMask {
        TrackMask { n_z, n_x, data: vec![0; n_z * n_x] }
    }

    pub fn get(&self, z: usize, x: usize) -> bool {
        self.data[z * self.n_x + x] != 0
    }

    pub fn set(&mut self, z: usize, x: usize, on: bool) {
        self.data[z * self.n_x + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Pack into whole bytes per row, MSB first, rows padded to a byte.
    pub fn to_packed_rows(&self) -> Vec<u8> {
        let stride = self.n_x.div_ceil(8);
        let mut out = vec![0u8; stride * self.n_z];
        for z in 0..self.n_z {
            for x in 0..self.n_x {
                if self.get(z, x) {
                    out[z * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        out
    }

    pub fn from_packed_rows(n_z: usize, n_x: usize, packed: &[u8]) -> Result<TrackMask> {
        let stride = n_x.div_ceil(8);
        if packed.len() != stride * n_z {
            return Err(Error::shape(stride * n_z, packed.len()));
        }
        let mut mask = TrackMask::zeros(n_z, n_x);
        for z in 0..n_z {
            for x in 0..n_x {
                let on = packed[z * stride + x / 8] & (0x80 >> (x % 8)) != 0;
                mask.set(z, x, on);
            }
        }
        Ok(mask)
    }
}

/// Draw the (z, x) projection of every trajectory onto a mask of
/// `upscale * n_z` by `upscale * n_x` pixels. Segments between consecutive
/// frames are supersampled at half the fine pitch, so a track never leaves
/// gaps. Samples outside the block contribute nothing.
pub fn rasterize_tracks(
    trajectories: &[Trajectory],
    geometry: &BlockGeometry,
    upscale: usize,
) -> Result<TrackMask> {
    if upscale == 0 || !upscale.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "upscale factor {upscale} is not a power of two"
        )));
    }
    let (n_z, n_x) = (geometry.n_z * upscale, geometry.n_x * upscale);
    let pitch = geometry.pitch_um / upscale as f64;
    let mut mask = TrackMask::zeros(n_z, n_x);
    let mut mark = |p: Vec3| {
        let iz = ((p.z - geometry.origin_z_um) / pitch).floor();
        let ix = ((p.x - geometry.origin_x_um) / pitch).floor();
        if iz >= 0.0 && ix >= 0.0 && (iz as usize) < n_z && (ix as usize) < n_x {
            mask.set(iz as usize, ix as usize, true);
        }
    };
    for traj in trajectories {
        if traj.samples.len() == 1 {
            mark(traj.samples[0].1);
            continue;
        }
        for w in traj.samples.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            let planar =
                ((b.z - a.z) * (b.z - a.z) + (b.x - a.x) * (b.x - a.x)).sqrt();
            let steps = ((planar / (0.5 * pitch)).ceil() as usize).max(1);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                mark(a + (b - a) * t);
            }
        }
    }
    Ok(mask)
}
