//! System impulse response: the full simulate/demodulate/beamform/compound
//! chain applied to a single unit scatterer, cropped and normalized.

use super::{
    compound, das_beamform, iq_demodulate, recording_window, simulate_channel_data, IQFrame,
    ProbeConfig, SequenceConfig, GRID_PITCH_UM,
};
use crate::vasculature::{BlockGeometry, Vec3};
use crate::{Error, Result};
use num_complex::Complex64;

/// Depth at which the reference impulse response is simulated, micrometers.
pub const PSF_REFERENCE_DEPTH_UM: f64 = 5000.0;

/// Complex impulse-response patch. Odd sides, unit Frobenius norm, magnitude
/// maximum at the center pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PSFPatch {
    pub n_z: usize,
    pub n_x: usize,
    data: Vec<Complex64>,
}

impl PSFPatch {
    pub fn from_values(n_z: usize, n_x: usize, data: Vec<Complex64>) -> Result<PSFPatch> {
        if n_z % 2 == 0 || n_x % 2 == 0 {
            return Err(Error::InvalidArgument("patch sides must be odd".into()));
        }
        if data.len() != n_z * n_x {
            return Err(Error::shape(n_z * n_x, data.len()));
        }
        let norm = data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("patch is all zero".into()));
        }
        let mut data = data;
        for v in &mut data {
            *v /= norm;
        }
        let center = (n_z / 2) * n_x + n_x / 2;
        let center_mag = data[center].norm();
        if data.iter().any(|c| c.norm() > center_mag + 1e-12) {
            return Err(Error::InvalidArgument("patch peak is not at the center".into()));
        }
        Ok(PSFPatch { n_z, n_x, data })
    }

    pub fn get(&self, z: usize, x: usize) -> Complex64 {
        self.data[z * self.n_x + x]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Simulate a unit scatterer at the reference depth through every steering
/// angle, compound, crop a patch around the peak, normalize.
pub fn synthesize_psf(
    probe: &ProbeConfig,
    seq: &SequenceConfig,
    patch: (usize, usize),
) -> Result<PSFPatch> {
    let (pz, px) = patch;
    if pz % 2 == 0 || px % 2 == 0 {
        return Err(Error::InvalidArgument("patch sides must be odd".into()));
    }
    probe.validate()?;
    seq.validate()?;

    // Margin keeps the crop inside the simulated grid even if the peak sits
    // a pixel or two off center.
    let margin = 4;
    let (n_z, n_x) = (pz + 2 * margin, px + 2 * margin);
    let grid = BlockGeometry {
        origin_z_um: PSF_REFERENCE_DEPTH_UM - (n_z as f64 / 2.0) * GRID_PITCH_UM,
        origin_x_um: -(n_x as f64 / 2.0) * GRID_PITCH_UM,
        n_z,
        n_x,
        pitch_um: GRID_PITCH_UM,
    };
    // Scatterer exactly on the center pixel's center.
    let scatterer = Vec3::new(
        grid.origin_x_um + (n_x as f64 / 2.0 - 0.5 + 0.5) * GRID_PITCH_UM,
        0.0,
        grid.origin_z_um + (n_z as f64 / 2.0 - 0.5 + 0.5) * GRID_PITCH_UM,
    );
    let window = recording_window(probe, seq, &grid);
    let frames: Result<Vec<IQFrame>> = seq
        .angles_deg
        .iter()
        .map(|&angle| {
            let rf = simulate_channel_data(&[(scatterer, 1.0)], probe, seq, angle, window)?;
            let iq = iq_demodulate(&rf, seq.tx_freq_hz, seq.decimation)?;
            Ok(das_beamform(&iq, probe, angle, &grid))
        })
        .collect();
    let image = compound(&frames?)?;

    let (peak_z, peak_x) = image.argmax_abs();
    let (hz, hx) = (pz / 2, px / 2);
    if peak_z < hz || peak_z + hz >= n_z || peak_x < hx || peak_x + hx >= n_x {
        return Err(Error::InvalidArgument("impulse response peak too close to grid edge".into()));
    }
    let mut data = Vec::with_capacity(pz * px);
    for z in peak_z - hz..=peak_z + hz {
        for x in peak_x - hx..=peak_x + hx {
            data.push(image.get(z, x));
        }
    }
    PSFPatch::from_values(pz, px, data)
}
