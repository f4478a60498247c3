//! DPI leaky integrate-and-fire neuron in current mode.
//!
//! The state variable is the DPI membrane current `I_mem`. Two dynamics are
//! available:
//!
//! * nonlinear:
//!   `tau dI/dt = I_in (I/I_r) / (1 + I/I_g) - I (1 - I_pf/I_r)`
//!   with `I_pf = k_pf I`,
//! * linear: `tau dI/dt = G I_in - I`,
//!
//! where `tau = n U_T C_m / I_r`. Spiking is an instantaneous crossing of
//! `i_th` followed by a reset to `i_reset` held for `t_rf`.

use crate::device::{DeviceParams, SLOPE_FACTOR, SUPPLY_V, THERMAL_VOLTAGE_V};
use crate::error::{ensure_positive, Error, Result};

/// Parasitic of the on-chip membrane-monitor follower.
pub const MONITOR_PARASITIC_F: f64 = 70e-15;

/// Membrane capacitance seen by the DPI including the monitor parasitic.
pub fn effective_membrane_capacitance(c_m_on_chip: f64, c_parasitic: f64) -> f64 {
    c_m_on_chip + c_parasitic
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronMode {
    Nonlinear,
    Linear,
}

/// Which saturated-DPI gain the linear mode uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainConvention {
    /// `G = I_g / I_r`, the saturated limit of the nonlinear form.
    Derived,
    /// `G = I_r / I_g`, as the linearized equation is commonly printed.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronConfig {
    /// Effective membrane capacitance (F).
    pub c_m: f64,
    /// DPI gain current (A).
    pub i_g: f64,
    /// Leak / time-constant current (A).
    pub i_r: f64,
    /// Membrane current at which a spike is emitted (A).
    pub i_th: f64,
    /// Membrane current right after reset (A).
    pub i_reset: f64,
    /// Refractory period (s).
    pub t_rf: f64,
    pub n: f64,
    pub u_t: f64,
    pub mode: NeuronMode,
    /// Positive-feedback strength `k_pf` in `I_pf = k_pf I_mem`.
    pub i_pf_gain: f64,
    pub gain_convention: GainConvention,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        let i_g = 2e-12;
        Self {
            c_m: 0.6e-12,
            i_g,
            i_r: 300e-12,
            i_th: 20e-12,
            i_reset: i_g / 10.0,
            t_rf: 20e-6,
            n: SLOPE_FACTOR,
            u_t: THERMAL_VOLTAGE_V,
            mode: NeuronMode::Nonlinear,
            i_pf_gain: 0.0,
            gain_convention: GainConvention::Derived,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronState {
    pub i_mem: f64,
    pub refractory_remaining: f64,
}

impl NeuronState {
    /// Freshly reset membrane, ready to integrate.
    pub fn resting(cfg: &NeuronConfig) -> Self {
        Self { i_mem: cfg.i_reset, refractory_remaining: 0.0 }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("c_m", self.c_m)?;
        ensure_positive("i_g", self.i_g)?;
        ensure_positive("i_r", self.i_r)?;
        ensure_positive("i_th", self.i_th)?;
        ensure_positive("i_reset", self.i_reset)?;
        ensure_positive("u_t", self.u_t)?;
        if !(self.n.is_finite() && self.n > 1.0) {
            return Err(Error::Domain(format!("slope factor n must exceed 1, got {}", self.n)));
        }
        if self.i_reset >= self.i_th {
            return Err(Error::Domain(format!(
                "i_reset ({:e} A) must be below i_th ({:e} A)",
                self.i_reset, self.i_th
            )));
        }
        if self.i_g >= self.i_r {
            return Err(Error::Domain(format!(
                "i_g ({:e} A) must be below i_r ({:e} A)",
                self.i_g, self.i_r
            )));
        }
        if !(self.t_rf.is_finite() && self.t_rf >= 0.0) {
            return Err(Error::Domain(format!("t_rf must be >= 0, got {}", self.t_rf)));
        }
        if !(self.i_pf_gain.is_finite() && self.i_pf_gain >= 0.0) {
            return Err(Error::Domain(format!("i_pf_gain must be >= 0, got {}", self.i_pf_gain)));
        }
        Ok(())
    }

    pub fn tau_m(&self) -> f64 {
        self.n * self.u_t * self.c_m / self.i_r
    }

    /// Gain of the saturated DPI used by the linear mode.
    pub fn dpi_gain(&self) -> f64 {
        match self.gain_convention {
            GainConvention::Derived => self.i_g / self.i_r,
            GainConvention::Printed => self.i_r / self.i_g,
        }
    }

    /// `dI_mem/dt` for a non-refractory membrane.
    pub fn membrane_derivative(&self, state: &NeuronState, i_in: f64) -> Result<f64> {
        if !(i_in >= 0.0) {
            return Err(Error::Domain(format!("input current must be >= 0, got {i_in}")));
        }
        Ok(self.derivative_unchecked(state.i_mem, i_in))
    }

    #[inline]
    pub(crate) fn derivative_unchecked(&self, i_mem: f64, i_in: f64) -> f64 {
        let tau = self.tau_m();
        match self.mode {
            NeuronMode::Linear => (self.dpi_gain() * i_in - i_mem) / tau,
            NeuronMode::Nonlinear => {
                let drive = i_in * (i_mem / self.i_r) / (1.0 + i_mem / self.i_g);
                let i_pf = self.i_pf_gain * i_mem;
                (drive - i_mem * (1.0 - i_pf / self.i_r)) / tau
            }
        }
    }

    pub fn spike_check(&self, state: &NeuronState) -> bool {
        state.i_mem >= self.i_th && state.refractory_remaining == 0.0
    }

    pub fn reset(&self, _state: &NeuronState) -> NeuronState {
        NeuronState { i_mem: self.i_reset, refractory_remaining: self.t_rf }
    }

    /// Closed-form linear-mode firing rate; zero below threshold.
    pub fn analytic_rate(&self, i_in: f64) -> f64 {
        let target = self.dpi_gain() * i_in;
        if target <= self.i_th {
            return 0.0;
        }
        let t_int = self.tau_m() * ((target - self.i_reset) / (target - self.i_th)).ln();
        1.0 / (t_int + self.t_rf)
    }

    /// Display voltage for a membrane current, `n U_T ln(I_mem / i_0)`.
    pub fn v_mem_of_i_mem(&self, i_mem: f64, i_0: f64) -> Result<f64> {
        ensure_positive("i_mem", i_mem)?;
        ensure_positive("i_0", i_0)?;
        Ok(self.n * self.u_t * (i_mem / i_0).ln())
    }
}

/// Neuron bias voltages as set on the bench.
///
/// `V_tu` drives the DPI gain device (`V_GS = V_tu`), `V_lk` the leak device
/// referenced to the supply (`V_SG = V_DD - V_lk`), and the comparator
/// threshold `V_th` maps onto the membrane current whose display voltage
/// equals `V_th`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBias {
    pub v_tu: f64,
    pub v_lk: f64,
    pub v_th: f64,
    /// Reference current of the membrane display map (A).
    pub i_mem_ref: f64,
}

impl Default for NeuronBias {
    fn default() -> Self {
        Self { v_tu: 0.25, v_lk: 0.1, v_th: 0.25, i_mem_ref: 5e-16 }
    }
}

impl NeuronBias {
    pub fn gain_current(&self, dev: &DeviceParams) -> Result<f64> {
        dev.drain_current(self.v_tu, 0.0)
    }

    pub fn leak_current(&self, dev: &DeviceParams) -> Result<f64> {
        dev.drain_current(SUPPLY_V - self.v_lk, 0.0)
    }

    pub fn threshold_current(&self, dev: &DeviceParams) -> Result<f64> {
        ensure_positive("i_mem_ref", self.i_mem_ref)?;
        let exponent = self.v_th / dev.n_ut();
        if exponent.abs() > 700.0 {
            return Err(Error::Saturation { exponent });
        }
        Ok(self.i_mem_ref * exponent.exp())
    }

    /// Copy of `base` with `i_g`, `i_r`, `i_th` from the bias voltages and
    /// `i_reset = i_g / 10`.
    pub fn apply(&self, dev: &DeviceParams, base: &NeuronConfig) -> Result<NeuronConfig> {
        let i_g = self.gain_current(dev)?;
        Ok(NeuronConfig {
            i_g,
            i_r: self.leak_current(dev)?,
            i_th: self.threshold_current(dev)?,
            i_reset: i_g / 10.0,
            ..*base
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear() -> NeuronConfig {
        NeuronConfig { mode: NeuronMode::Linear, ..NeuronConfig::default() }
    }

    #[test]
    fn tau_from_effective_capacitance() {
        let c = NeuronConfig { i_r: 1e-9, c_m: 0.6e-12, ..linear() };
        assert_relative_eq!(c.tau_m(), 18e-6, max_relative = 1e-12);
        let half = NeuronConfig { i_r: 2e-9, ..c };
        assert_eq!(half.tau_m(), c.tau_m() / 2.0);
        assert_relative_eq!(
            effective_membrane_capacitance(0.53e-12, MONITOR_PARASITIC_F),
            0.6e-12,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_input_decays_exponentially() {
        let c = linear();
        let s = NeuronState { i_mem: 5e-12, refractory_remaining: 0.0 };
        assert_relative_eq!(
            c.membrane_derivative(&s, 0.0).unwrap(),
            -5e-12 / c.tau_m(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn rejects_negative_input() {
        let c = linear();
        assert!(c.membrane_derivative(&NeuronState::resting(&c), -1e-12).is_err());
    }

    #[test]
    fn saturated_dpi_approaches_linear_form() {
        let nl = NeuronConfig { mode: NeuronMode::Nonlinear, i_pf_gain: 0.0, ..NeuronConfig::default() };
        let lin = NeuronConfig { mode: NeuronMode::Linear, ..nl };
        for ratio in [50.0, 80.0, 200.0] {
            let s = NeuronState { i_mem: ratio * nl.i_g, refractory_remaining: 0.0 };
            let i_in = 30e-9;
            let a = nl.membrane_derivative(&s, i_in).unwrap();
            let b = lin.membrane_derivative(&s, i_in).unwrap();
            // relative to the saturated drive G I_in / tau
            let drive = lin.dpi_gain() * i_in / lin.tau_m();
            assert!((a - b).abs() <= 0.02 * drive, "ratio {ratio}: {a:e} vs {b:e}");
        }
    }

    #[test]
    fn spike_check_boundaries() {
        let c = linear();
        assert!(c.spike_check(&NeuronState { i_mem: c.i_th, refractory_remaining: 0.0 }));
        assert!(!c.spike_check(&NeuronState { i_mem: 2.0 * c.i_th, refractory_remaining: 1e-6 }));
        assert!(!c.spike_check(&NeuronState { i_mem: c.i_reset, refractory_remaining: 0.0 }));
    }

    #[test]
    fn reset_is_constant_map() {
        let c = linear();
        let s = NeuronState { i_mem: 3.0 * c.i_th, refractory_remaining: 0.0 };
        let r = c.reset(&s);
        assert_eq!(r, NeuronState { i_mem: c.i_reset, refractory_remaining: c.t_rf });
        assert_eq!(c.reset(&r).i_mem, r.i_mem);
        let no_rf = NeuronConfig { t_rf: 0.0, ..c };
        assert_eq!(no_rf.reset(&s).refractory_remaining, 0.0);
    }

    #[test]
    fn analytic_rate_closed_forms() {
        let c = NeuronConfig { t_rf: 0.0, i_reset: 1e-30, ..linear() };
        let g = c.dpi_gain();
        assert_eq!(c.analytic_rate(c.i_th / g), 0.0);
        assert_eq!(c.analytic_rate(0.5 * c.i_th / g), 0.0);
        let r = c.analytic_rate(2.0 * c.i_th / g);
        assert_relative_eq!(r, 1.0 / (c.tau_m() * 2f64.ln()), max_relative = 1e-12);
    }

    #[test]
    fn display_voltage() {
        let c = linear();
        assert_eq!(c.v_mem_of_i_mem(3e-12, 3e-12).unwrap(), 0.0);
        assert_relative_eq!(
            c.v_mem_of_i_mem(std::f64::consts::E * 1e-12, 1e-12).unwrap(),
            0.03,
            max_relative = 1e-12
        );
        assert!(c.v_mem_of_i_mem(2e-12, 1e-12).unwrap() < c.v_mem_of_i_mem(3e-12, 1e-12).unwrap());
        assert!(c.v_mem_of_i_mem(0.0, 1e-12).is_err());
        assert!(c.v_mem_of_i_mem(1e-12, -1.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(NeuronConfig::default().validate().is_ok());
        let d = NeuronConfig::default();
        assert!(NeuronConfig { i_reset: d.i_th, ..d }.validate().is_err());
        assert!(NeuronConfig { i_g: d.i_r, ..d }.validate().is_err());
        assert!(NeuronConfig { t_rf: -1.0, ..d }.validate().is_err());
        assert!(NeuronConfig { c_m: 0.0, ..d }.validate().is_err());
    }

    #[test]
    fn bench_bias_maps_into_dpi_window() {
        let dev = DeviceParams::default();
        let c = NeuronBias::default().apply(&dev, &NeuronConfig::default()).unwrap();
        c.validate().unwrap();
        assert!(c.i_g < c.i_th && c.i_th < c.i_r);
        assert!(c.i_r / c.i_g > 100.0);
        assert_relative_eq!(
            c.v_mem_of_i_mem(c.i_th, NeuronBias::default().i_mem_ref).unwrap(),
            0.25,
            max_relative = 1e-12
        );
    }

    #[test]
    fn printed_gain_convention_inverts() {
        let c = NeuronConfig { gain_convention: GainConvention::Printed, ..linear() };
        assert_eq!(c.dpi_gain(), c.i_r / c.i_g);
    }
}
