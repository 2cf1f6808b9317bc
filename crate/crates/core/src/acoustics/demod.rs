//! RF to complex baseband: mix down by the demodulation frequency, low-pass
//! with a windowed-sinc FIR, decimate.
//!
//! The filter is linear-phase and applied about its center tap, so output
//! sample k still refers to time `t_start + k * decimation / fs_rf`; the
//! magnitude of the output is the RF envelope for narrowband inputs.

use super::RFFrame;
use crate::{Error, Result};
use num_complex::Complex64;

const FIR_TAPS: usize = 65;

/// Complex baseband channels at the decimated rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IQChannels {
    pub n_elements: usize,
    pub n_samples: usize,
    pub fs_hz: f64,
    pub f_demod_hz: f64,
    pub t_start_s: f64,
    data: Vec<Complex64>,
}

impl IQChannels {
    pub fn channel(&self, e: usize) -> &[Complex64] {
        &self.data[e * self.n_samples..(e + 1) * self.n_samples]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
}

/// Hann-windowed sinc low-pass, unity DC gain, cutoff as a fraction of the
/// sampling rate.
fn lowpass_taps(cutoff_frac: f64) -> Vec<f64> {
    let m = (FIR_TAPS - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..FIR_TAPS)
        .map(|n| {
            let k = n as f64 - m;
            let sinc = if k.abs() < 1e-12 {
                1.0
            } else {
                let x = std::f64::consts::TAU * cutoff_frac * k;
                x.sin() / x
            };
            let window =
                0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / (FIR_TAPS - 1) as f64).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Demodulate every channel of `rf` at `f_demod_hz` and keep one sample in
/// `decimation`. The passband is half the demodulation frequency, which
/// preserves a 100% fractional bandwidth around the carrier.
pub fn iq_demodulate(rf: &RFFrame, f_demod_hz: f64, decimation: usize) -> Result<IQChannels> {
    if decimation == 0 {
        return Err(Error::InvalidArgument("decimation must be nonzero".into()));
    }
    if !(f_demod_hz > 0.0) {
        return Err(Error::InvalidArgument("demodulation frequency must be positive".into()));
    }
    let taps = lowpass_taps(0.5 * f_demod_hz / rf.fs_hz);
    let mid = (FIR_TAPS - 1) / 2;
    let n_out = rf.n_samples.div_ceil(decimation);

    // The mixing phasor at sample i is shared by all channels.
    let rot: Vec<Complex64> = (0..rf.n_samples)
        .map(|i| {
            let t = rf.t_start_s + i as f64 / rf.fs_hz;
            // Factor 2 restores the analytic-signal amplitude lost by mixing.
            Complex64::from_polar(2.0, -std::f64::consts::TAU * f_demod_hz * t)
        })
        .collect();

    let mut data = Vec::with_capacity(rf.n_elements * n_out);
    let mut mixed = vec![Complex64::ZERO; rf.n_samples];
    for e in 0..rf.n_elements {
        let ch = rf.channel(e);
        for i in 0..rf.n_samples {
            mixed[i] = rot[i] * ch[i];
        }
        for k in 0..n_out {
            let center = k * decimation;
            let mut acc = Complex64::ZERO;
            for (j, &h) in taps.iter().enumerate() {
                let idx = center as isize + j as isize - mid as isize;
                if idx >= 0 && (idx as usize) < rf.n_samples {
                    acc += mixed[idx as usize] * h;
                }
            }
            data.push(acc);
        }
    }
    Ok(IQChannels {
        n_elements: rf.n_elements,
        n_samples: n_out,
        fs_hz: rf.fs_hz / decimation as f64,
        f_demod_hz,
        t_start_s: rf.t_start_s,
        data,
    })
}
