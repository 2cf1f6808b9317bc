//! Delay-and-sum on the quarter-wavelength grid with coherent compounding.

use super::{IQChannels, ProbeConfig};
use crate::vasculature::BlockGeometry;
use crate::{Error, Result};
use num_complex::Complex64;

/// Beamformed complex image. Pixels sample the field at cell centers:
/// `origin + (index + 0.5) * pitch`, row-major with depth as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct IQFrame {
    pub geom: BlockGeometry,
    data: Vec<Complex64>,
}

impl IQFrame {
    pub fn zeros(geom: BlockGeometry) -> IQFrame {
        IQFrame { geom, data: vec![Complex64::new(0.0, 0.0); geom.n_z * geom.n_x] }
    }

    pub fn get(&self, z: usize, x: usize) -> Complex64 {
        self.data[z * self.geom.n_x + x]
    }

    pub fn set(&mut self, z: usize, x: usize, v: Complex64) {
        self.data[z * self.geom.n_x + x] = v;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Pixel center position in micrometers (z, x).
    pub fn pixel_center_um(&self, z: usize, x: usize) -> (f64, f64) {
        (
            self.geom.origin_z_um + (z as f64 + 0.5) * self.geom.pitch_um,
            self.geom.origin_x_um + (x as f64 + 0.5) * self.geom.pitch_um,
        )
    }

    pub fn argmax_abs(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = -1.0;
        for z in 0..self.geom.n_z {
            for x in 0..self.geom.n_x {
                let v = self.get(z, x).norm_sqr();
                if v > best_v {
                    best_v = v;
                    best = (z, x);
                }
            }
        }
        best
    }
}

/// Complex cine-loop: `n_t` frames over one block geometry, t-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IQBlock {
    pub geom: BlockGeometry,
    pub n_t: usize,
    data: Vec<Complex64>,
}

impl IQBlock {
    pub fn from_frames(frames: &[IQFrame]) -> Result<IQBlock> {
        let geom = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty frame list".into()))?
            .geom;
        let mut data = Vec::with_capacity(frames.len() * geom.n_z * geom.n_x);
        for f in frames {
            if f.geom != geom {
                return Err(Error::shape(format!("{geom:?}"), format!("{:?}", f.geom)));
            }
            data.extend_from_slice(f.data());
        }
        Ok(IQBlock { geom, n_t: frames.len(), data })
    }

    pub fn zeros(geom: BlockGeometry, n_t: usize) -> IQBlock {
        IQBlock { geom, n_t, data: vec![Complex64::new(0.0, 0.0); n_t * geom.n_z * geom.n_x] }
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let stride = self.geom.n_z * self.geom.n_x;
        &self.data[t * stride..(t + 1) * stride]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let stride = self.geom.n_z * self.geom.n_x;
        &mut self.data[t * stride..(t + 1) * stride]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
}

/// Delay-and-sum one steered transmit onto the grid. Per pixel: linearly
/// interpolated IQ sample at the two-way delay, carrier phase rotation
/// matching that delay, Hann apodization over an f-number-1 receive
/// aperture. Samples outside the recording are zero.
pub fn das_beamform(
    iq: &IQChannels,
    probe: &ProbeConfig,
    angle_deg: f64,
    grid: &BlockGeometry,
) -> IQFrame {
    let c = probe.sound_speed_m_s;
    let a = angle_deg.to_radians();
    let f_number = 1.0;
    let mut frame = IQFrame::zeros(*grid);
    for iz in 0..grid.n_z {
        let z = (grid.origin_z_um + (iz as f64 + 0.5) * grid.pitch_um) * 1e-6;
        let half_aperture = (z / (2.0 * f_number)).max(probe.pitch_m);
        for ix in 0..grid.n_x {
            let x = (grid.origin_x_um + (ix as f64 + 0.5) * grid.pitch_um) * 1e-6;
            let tau_tx = (x * a.sin() + z * a.cos()) / c;
            let mut acc = Complex64::new(0.0, 0.0);
            for e in 0..probe.n_elements {
                let ex = probe.element_x_m(e);
                let lateral = ex - x;
                if lateral.abs() > half_aperture {
                    continue;
                }
                let apod = {
                    let u = lateral / half_aperture;
                    0.5 * (1.0 + (std::f64::consts::PI * u).cos())
                };
                let tau = tau_tx + (lateral * lateral + z * z).sqrt() / c;
                let pos = (tau - iq.t_start_s) * iq.fs_hz;
                if pos < 0.0 {
                    continue;
                }
                let i0 = pos.floor() as usize;
                if i0 + 1 >= iq.n_samples {
                    continue;
                }
                let frac = pos - i0 as f64;
                let ch = iq.channel(e);
                let sample = ch[i0] * (1.0 - frac) + ch[i0 + 1] * frac;
                let rot = Complex64::from_polar(1.0, std::f64::consts::TAU * iq.f_demod_hz * tau);
                acc += sample * rot * apod;
            }
            frame.set(iz, ix, acc);
        }
    }
    frame
}

/// Coherent mean over steering angles.
pub fn compound(frames: &[IQFrame]) -> Result<IQFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to compound".into()))?;
    let mut out = IQFrame::zeros(first.geom);
    for f in frames {
        if f.geom != first.geom {
            return Err(Error::shape(format!("{:?}", first.geom), format!("{:?}", f.geom)));
        }
        for (o, v) in out.data.iter_mut().zip(f.data()) {
            *o += v;
        }
    }
    let k = 1.0 / frames.len() as f64;
    for o in &mut out.data {
        *o *= k;
    }
    Ok(out)
}
