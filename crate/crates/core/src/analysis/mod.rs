//! Measurement post-processing: THD, firing rate, V-to-F linearity,
//! small-signal figures and a power estimate.

pub mod thd;
pub mod vf;

pub use thd::{thd, transconductor_thd, ThdReport, Transfer, DEFAULT_HARMONICS};
pub use vf::{linearity_error, vf_curve, LineFit, Normalization, VfCurve, VfPoint, VfSettings};

use crate::device::SUPPLY_V;
use crate::error::{ensure_positive, Result};
use crate::sim::{EncoderConfig, SpikeTrain};
use crate::transconductor::TransconductorConfig;

/// Spikes per second in `[t_start, t_end)`.
pub fn firing_rate(spikes: &SpikeTrain, t_start: f64, t_end: f64) -> f64 {
    debug_assert!(t_end > t_start);
    spikes.count_in(t_start, t_end) as f64 / (t_end - t_start)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallSignal {
    pub gm: f64,
    pub dc_gain_db: f64,
    pub f_unity_hz: f64,
}

/// Single-pole view of the transconductor: gain `G_m r_out`, unity-gain
/// frequency `G_m / (2 pi C_L)`.
pub fn small_signal(cfg: &TransconductorConfig, r_out: f64, c_load: f64) -> Result<SmallSignal> {
    ensure_positive("r_out", r_out)?;
    ensure_positive("c_load", c_load)?;
    let gm = cfg.effective_gm()?;
    Ok(small_signal_from_gm(gm, r_out, c_load))
}

pub fn small_signal_from_gm(gm: f64, r_out: f64, c_load: f64) -> SmallSignal {
    SmallSignal {
        gm,
        dc_gain_db: 20.0 * (gm * r_out).log10(),
        f_unity_hz: gm / (std::f64::consts::TAU * c_load),
    }
}

/// Output resistance of a subthreshold output stage with Early voltage `v_early`.
pub fn output_resistance(cfg: &TransconductorConfig, v_early: f64) -> f64 {
    v_early / cfg.output_quiescent()
}

/// Static-plus-switching power model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    pub vdd: f64,
    /// Branches mirrored from `i_ref`: five in the transconductor, two in the neuron.
    pub k_static: f64,
    /// Bias drawn by the comparator and spike inverters (A).
    pub i_neuron_static: f64,
    /// Switched capacitance besides the membrane (F).
    pub c_dyn: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self { vdd: SUPPLY_V, k_static: 7.0, i_neuron_static: 25e-9, c_dyn: 0.1e-12 }
    }
}

impl PowerModel {
    pub fn static_power(&self, encoder: &EncoderConfig) -> f64 {
        self.vdd * (self.k_static * encoder.transconductor.i_ref + self.i_neuron_static)
    }

    pub fn dynamic_power(&self, encoder: &EncoderConfig, f_spike: f64) -> f64 {
        (encoder.neuron.c_m + self.c_dyn) * self.vdd * self.vdd * f_spike
    }
}

pub fn power_estimate(encoder: &EncoderConfig, model: &PowerModel, f_spike: f64) -> f64 {
    model.static_power(encoder) + model.dynamic_power(encoder, f_spike)
}
