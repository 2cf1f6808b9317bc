//! Time-domain point-scatterer channel model.
//!
//! A steered plane wave reaches each scatterer after a projection delay; the
//! scatterer re-radiates spherically toward every element. Each arrival is a
//! Hann-windowed burst whose envelope peaks exactly at the total time of
//! flight, weighted by receive element directivity and 1/r spreading.

use super::{ProbeConfig, SequenceConfig};
use crate::vasculature::{BlockGeometry, Vec3};
use crate::{Error, Result};

/// Real channel data for one transmit: `n_elements` rows of `n_samples`
/// values sampled at `fs_hz` starting at `t_start_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct RFFrame {
    pub n_elements: usize,
    pub n_samples: usize,
    pub fs_hz: f64,
    pub t_start_s: f64,
    data: Vec<f64>,
}

impl RFFrame {
    pub fn zeros(n_elements: usize, n_samples: usize, fs_hz: f64, t_start_s: f64) -> RFFrame {
        RFFrame { n_elements, n_samples, fs_hz, t_start_s, data: vec![0.0; n_elements * n_samples] }
    }

    pub fn channel(&self, e: usize) -> &[f64] {
        &self.data[e * self.n_samples..(e + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.data[e * self.n_samples..(e + 1) * self.n_samples]
    }

    pub fn scaled(&self, k: f64) -> RFFrame {
        RFFrame { data: self.data.iter().map(|v| v * k).collect(), ..self.clone() }
    }

    pub fn added(&self, other: &RFFrame) -> RFFrame {
        assert_eq!(self.data.len(), other.data.len());
        RFFrame {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Recording window (start time, sample count) covering every two-way path
/// from the grid corners to any element at any steering angle, padded by the
/// pulse duration on both sides.
pub fn recording_window(
    probe: &ProbeConfig,
    seq: &SequenceConfig,
    grid: &BlockGeometry,
) -> (f64, usize) {
    let c = probe.sound_speed_m_s;
    let corners_m = [
        (grid.origin_x_um * 1e-6, grid.origin_z_um * 1e-6),
        ((grid.origin_x_um + grid.extent_x_um()) * 1e-6, grid.origin_z_um * 1e-6),
        (grid.origin_x_um * 1e-6, (grid.origin_z_um + grid.extent_z_um()) * 1e-6),
        (
            (grid.origin_x_um + grid.extent_x_um()) * 1e-6,
            (grid.origin_z_um + grid.extent_z_um()) * 1e-6,
        ),
    ];
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for &(x, z) in &corners_m {
        for angle in &seq.angles_deg {
            let a = angle.to_radians();
            let tx = (x * a.sin() + z * a.cos()) / c;
            for e in 0..probe.n_elements {
                let dx = x - probe.element_x_m(e);
                let rx = (dx * dx + z * z).sqrt() / c;
                t_min = t_min.min(tx + rx);
                t_max = t_max.max(tx + rx);
            }
        }
    }
    let pulse = seq.pulse_duration_s();
    let t_start = (t_min - pulse).max(0.0);
    let n = ((t_max + pulse - t_start) * seq.fs_rf_hz).ceil() as usize + 1;
    (t_start, n)
}

/// 3-cycle burst: cosine carrier under a Hann envelope centered at t = 0, so
/// an echo's envelope peak lands exactly on its time of flight.
fn pulse(t: f64, seq: &SequenceConfig) -> f64 {
    let half = 0.5 * seq.pulse_duration_s();
    if t.abs() > half {
        return 0.0;
    }
    let env = 0.5 * (1.0 + (std::f64::consts::PI * t / half).cos());
    env * (std::f64::consts::TAU * seq.tx_freq_hz * t).cos()
}

/// Synthesize one steered transmit. Scatterers are (position um, amplitude)
/// in the probe frame; superposition over scatterers is exact.
pub fn simulate_channel_data(
    scatterers: &[(Vec3, f64)],
    probe: &ProbeConfig,
    seq: &SequenceConfig,
    angle_deg: f64,
    window: (f64, usize),
) -> Result<RFFrame> {
    let (t_start, n_samples) = window;
    let mut frame = RFFrame::zeros(probe.n_elements, n_samples, seq.fs_rf_hz, t_start);
    let c = probe.sound_speed_m_s;
    let a = angle_deg.to_radians();
    let lambda = c / seq.tx_freq_hz;
    let half_support = 0.5 * seq.pulse_duration_s();
    let fs = seq.fs_rf_hz;

    for &(pos_um, amp) in scatterers {
        if pos_um.z <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scatterer at depth {} um is behind the array",
                pos_um.z
            )));
        }
        let (x, y, z) = (pos_um.x * 1e-6, pos_um.y * 1e-6, pos_um.z * 1e-6);
        let tau_tx = (x * a.sin() + z * a.cos()) / c;
        for e in 0..probe.n_elements {
            let dx = x - probe.element_x_m(e);
            let r = (dx * dx + y * y + z * z).sqrt();
            let tau = tau_tx + r / c;
            // Hard-baffle receive directivity of the finite element width.
            let sin_theta = dx / r;
            let u = probe.element_width_m / lambda * sin_theta;
            let directivity = if u.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * u).sin() / (std::f64::consts::PI * u)
            };
            let gain = amp * directivity / r.max(1e-4);
            let i_lo = ((tau - half_support - t_start) * fs).floor().max(0.0) as usize;
            let i_hi = (((tau + half_support - t_start) * fs).ceil() as usize).min(n_samples);
            let ch = frame.channel_mut(e);
            for i in i_lo..i_hi {
                let t = t_start + i as f64 / fs;
                ch[i] += gain * pulse(t - tau, seq);
            }
        }
    }
    Ok(frame)
}
