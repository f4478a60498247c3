//! Total harmonic distortion by single-bin Fourier projection.
//!
//! The record must span an integer number of fundamental periods with an
//! integer number of samples per period; then every harmonic falls exactly
//! on a DFT bin and no window is needed.

use crate::error::{Error, Result};
use crate::transconductor::TransconductorConfig;

pub const DEFAULT_HARMONICS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct ThdReport {
    pub fundamental_amplitude: f64,
    /// Amplitudes of harmonics 2, 3, ...
    pub harmonic_amplitudes: Vec<f64>,
    pub thd_fraction: f64,
}

impl ThdReport {
    pub fn thd_percent(&self) -> f64 {
        100.0 * self.thd_fraction
    }
}

/// Amplitude of the `k`-th harmonic over whole periods of `period` samples.
fn projection(samples: &[f64], period: usize, k: usize) -> f64 {
    let n = samples.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, x) in samples.iter().enumerate() {
        let phase = std::f64::consts::TAU * ((k * i) % period) as f64 / period as f64;
        re += x * phase.cos();
        im += x * phase.sin();
    }
    2.0 * re.hypot(im) / n
}

pub fn thd(samples: &[f64], f0: f64, fs: f64, n_harmonics: usize) -> Result<ThdReport> {
    if !(f0 > 0.0 && fs > 0.0) {
        return Err(Error::Precondition("f0 and fs must be positive".into()));
    }
    let ratio = fs / f0;
    let period = ratio.round();
    if (ratio - period).abs() > 1e-9 * ratio {
        return Err(Error::Precondition(format!("fs/f0 = {ratio} is not an integer")));
    }
    let period = period as usize;
    if period < 2 * (n_harmonics + 1) {
        return Err(Error::Precondition(format!(
            "{period} samples per period cannot resolve {n_harmonics} harmonics"
        )));
    }
    if samples.is_empty() || samples.len() % period != 0 {
        return Err(Error::Precondition(format!(
            "{} samples do not cover whole periods of {period}",
            samples.len()
        )));
    }

    let fundamental = projection(samples, period, 1);
    let harmonics: Vec<f64> = (2..=n_harmonics + 1).map(|k| projection(samples, period, k)).collect();
    if fundamental == 0.0 {
        return Err(Error::Precondition("signal has no fundamental component".into()));
    }
    let power: f64 = harmonics.iter().map(|h| h * h).sum();
    Ok(ThdReport {
        fundamental_amplitude: fundamental,
        harmonic_amplitudes: harmonics,
        thd_fraction: power.sqrt() / fundamental,
    })
}

/// Which transfer a sine is pushed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transfer {
    Linearized,
    RawPair,
}

/// THD of the transconductor output for a sine of `amplitude` volts,
/// sampled at `samples_per_period` points over one period.
pub fn transconductor_thd(
    cfg: &TransconductorConfig,
    transfer: Transfer,
    amplitude: f64,
    samples_per_period: usize,
    n_harmonics: usize,
) -> Result<ThdReport> {
    let samples = (0..samples_per_period)
        .map(|i| {
            let v = amplitude * (std::f64::consts::TAU * i as f64 / samples_per_period as f64).sin();
            match transfer {
                Transfer::Linearized => cfg.output_current(v),
                Transfer::RawPair => cfg.raw_pair_output_current(v),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    thd(&samples, 1.0, samples_per_period as f64, n_harmonics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn tone(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|i| f(TAU * i as f64 / 64.0)).collect()
    }

    #[test]
    fn pure_sine_has_no_distortion() {
        let r = thd(&tone(128, |p| 3.0 * p.sin() + 0.5), 1.0, 64.0, DEFAULT_HARMONICS).unwrap();
        assert!(r.thd_fraction < 1e-9);
        assert_relative_eq!(r.fundamental_amplitude, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn known_third_harmonic() {
        let r = thd(&tone(64, |p| p.sin() + 0.02 * (3.0 * p).sin()), 1.0, 64.0, DEFAULT_HARMONICS).unwrap();
        assert!((r.thd_fraction - 0.02).abs() < 1e-6);
        assert_relative_eq!(r.harmonic_amplitudes[1], 0.02, max_relative = 1e-9);
    }

    #[test]
    fn scale_invariant() {
        let f = |p: f64| p.sin() + 0.1 * (2.0 * p).cos() + 0.03 * (5.0 * p).sin();
        let a = thd(&tone(64, f), 1.0, 64.0, 9).unwrap();
        let b = thd(&tone(64, |p| 7.5 * f(p)), 1.0, 64.0, 9).unwrap();
        assert_relative_eq!(a.thd_fraction, b.thd_fraction, max_relative = 1e-12);
    }

    #[test]
    fn preconditions() {
        let s = tone(64, f64::sin);
        assert!(thd(&s, 1.0, 64.5, 9).is_err());
        assert!(thd(&s, 1.0, 64.0, 40).is_err());
        assert!(thd(&s[..60], 1.0, 64.0, 9).is_err());
    }

    #[test]
    fn linearized_transfer_beats_raw_pair() {
        let cfg = TransconductorConfig::default();
        for amp in [0.1, 0.25, 0.4] {
            let lin = transconductor_thd(&cfg, Transfer::Linearized, amp, 256, 9).unwrap();
            let raw = transconductor_thd(&cfg, Transfer::RawPair, amp, 256, 9).unwrap();
            assert!(lin.thd_fraction < raw.thd_fraction, "amp {amp}");
        }
    }

    #[test]
    fn mid_amplitude_thd_in_band() {
        let cfg = TransconductorConfig::default();
        let r = transconductor_thd(&cfg, Transfer::Linearized, 0.25, 256, 9).unwrap();
        assert!((0.005..=0.08).contains(&r.thd_fraction), "{}", r.thd_fraction);
    }
}
