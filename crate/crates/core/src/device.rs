//! Weak-inversion MOS model.
//!
//! Long-channel devices in subthreshold saturation (`V_SD >= 3 U_T`) follow
//!
//! ```text
//! I_D = I_S (W/L) exp((V_SG - V_T0 + (n - 1) V_SB) / (n U_T))
//! ```
//!
//! written in pMOS convention. nMOS devices use the same law with `V_GS`,
//! `V_BS`. There is no triode region and no channel-length modulation.

use crate::error::{ensure_finite, ensure_positive, Error, Result};

/// Supply rail of the encoder.
pub const SUPPLY_V: f64 = 0.5;

/// Room-temperature thermal voltage.
pub const THERMAL_VOLTAGE_V: f64 = 0.025;

/// Subthreshold slope factor of the 0.18 um process.
pub const SLOPE_FACTOR: f64 = 1.2;

/// Largest exponent accepted before the model reports saturation.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceParams {
    /// Lumped specific current `2 n mu C_ox U_T^2` (A).
    pub i_spec: f64,
    pub w_over_l: f64,
    pub n: f64,
    /// Thermal voltage (V).
    pub u_t: f64,
    /// Zero-bias threshold (V).
    pub v_t0: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            i_spec: 100e-12,
            w_over_l: 2.0,
            n: SLOPE_FACTOR,
            u_t: THERMAL_VOLTAGE_V,
            v_t0: 0.4,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("i_spec", self.i_spec)?;
        ensure_positive("w_over_l", self.w_over_l)?;
        ensure_positive("u_t", self.u_t)?;
        ensure_positive("v_t0", self.v_t0)?;
        if !(self.n.is_finite() && self.n > 1.0) {
            return Err(Error::Domain(format!("slope factor n must exceed 1, got {}", self.n)));
        }
        Ok(())
    }

    /// `n U_T`, the voltage scale of every exponential in the model.
    pub fn n_ut(&self) -> f64 {
        self.n * self.u_t
    }

    /// Current at `V_SG = V_T0`, `V_SB = 0`.
    pub fn unit_current(&self) -> f64 {
        self.i_spec * self.w_over_l
    }

    pub fn drain_current(&self, v_sg: f64, v_sb: f64) -> Result<f64> {
        ensure_finite("v_sg", v_sg)?;
        ensure_finite("v_sb", v_sb)?;
        let exponent = (v_sg - self.v_t0 + (self.n - 1.0) * v_sb) / self.n_ut();
        if exponent.abs() > MAX_EXPONENT {
            return Err(Error::Saturation { exponent });
        }
        Ok(self.unit_current() * exponent.exp())
    }

    /// Source-gate voltage that carries `i_d` at zero source-bulk bias.
    pub fn source_gate_voltage(&self, i_d: f64) -> Result<f64> {
        ensure_positive("i_d", i_d)?;
        Ok(self.v_t0 + self.n_ut() * (i_d / self.unit_current()).ln())
    }

    /// Gate transconductance `dI_D/dV_SG = I_D / (n U_T)`.
    pub fn gm_gate(&self, i_d: f64) -> Result<f64> {
        ensure_positive("i_d", i_d)?;
        Ok(i_d / self.n_ut())
    }

    /// Bulk transconductance `dI_D/dV_SB = (n - 1) I_D / (n U_T)`.
    ///
    /// The bulk-to-gate ratio is `(n - 1)/n`, about 0.17 for `n = 1.2`.
    pub fn gm_bulk(&self, i_d: f64) -> Result<f64> {
        ensure_positive("i_d", i_d)?;
        Ok((self.n - 1.0) * i_d / self.n_ut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dev() -> DeviceParams {
        DeviceParams::default()
    }

    #[test]
    fn threshold_bias_gives_unit_current() {
        let d = dev();
        assert_eq!(d.drain_current(d.v_t0, 0.0).unwrap(), d.i_spec * d.w_over_l);
    }

    #[test]
    fn ln2_overdrive_doubles_current() {
        let d = dev();
        let i = d.drain_current(d.v_t0 + d.n * d.u_t * 2f64.ln(), 0.0).unwrap();
        assert_relative_eq!(i, 2.0 * d.unit_current(), max_relative = 1e-14);
    }

    #[test]
    fn defaults_match_room_temperature_process() {
        let d = dev();
        assert_eq!(d.n, 1.2);
        assert_eq!(d.u_t, 0.025);
    }

    #[test]
    fn gm_gate_value() {
        let gm = dev().gm_gate(1e-9).unwrap();
        assert_relative_eq!(gm, 1e-9 / 0.03, max_relative = 1e-12);
        assert_eq!(dev().gm_gate(2e-9).unwrap(), 2.0 * gm);
    }

    #[test]
    fn bulk_to_gate_ratio() {
        let d = dev();
        let r = d.gm_bulk(3e-9).unwrap() / d.gm_gate(3e-9).unwrap();
        assert_relative_eq!(r, 0.2, max_relative = 1e-12);
        let near_one = DeviceParams { n: 1.0 + 1e-9, ..d };
        assert!(near_one.gm_bulk(1e-9).unwrap() < 1e-16);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = dev();
        assert!(matches!(d.drain_current(f64::NAN, 0.0), Err(Error::Domain(_))));
        assert!(matches!(d.drain_current(30.0, 0.0), Err(Error::Saturation { .. })));
        assert!(d.gm_gate(0.0).is_err());
        assert!(d.gm_bulk(-1e-9).is_err());
        assert!(DeviceParams { n: 1.0, ..d }.validate().is_err());
        assert!(DeviceParams { i_spec: 0.0, ..d }.validate().is_err());
    }

    #[test]
    fn analytic_gm_matches_finite_difference_on_log_grid() {
        let d = dev();
        let h = 1e-6;
        for k in 0..40 {
            let v_sg = 0.1 + 0.01 * k as f64;
            let v_sb = 0.002 * k as f64 - 0.04;
            let i = d.drain_current(v_sg, v_sb).unwrap();
            let fd_g = (d.drain_current(v_sg + h, v_sb).unwrap()
                - d.drain_current(v_sg - h, v_sb).unwrap())
                / (2.0 * h);
            let fd_b = (d.drain_current(v_sg, v_sb + h).unwrap()
                - d.drain_current(v_sg, v_sb - h).unwrap())
                / (2.0 * h);
            assert_relative_eq!(d.gm_gate(i).unwrap(), fd_g, max_relative = 1e-6);
            assert_relative_eq!(d.gm_bulk(i).unwrap(), fd_b, max_relative = 1e-6);
        }
    }

    #[test]
    fn source_gate_voltage_inverts_drain_current() {
        let d = dev();
        let v = d.source_gate_voltage(3.7e-9).unwrap();
        assert_relative_eq!(d.drain_current(v, 0.0).unwrap(), 3.7e-9, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn log_linear_in_source_gate(v in -0.2f64..0.8, delta in -0.3f64..0.3, v_sb in -0.3f64..0.3) {
            let d = dev();
            let lhs = d.drain_current(v + delta, v_sb).unwrap().ln() - d.drain_current(v, v_sb).unwrap().ln();
            prop_assert!((lhs - delta / d.n_ut()).abs() < 1e-12);
        }

        #[test]
        fn strictly_increasing(v in -0.2f64..0.8, v_sb in -0.3f64..0.3) {
            let d = dev();
            let i = d.drain_current(v, v_sb).unwrap();
            prop_assert!(i > 0.0);
            prop_assert!(d.drain_current(v + 1e-3, v_sb).unwrap() > i);
            prop_assert!(d.drain_current(v, v_sb + 1e-3).unwrap() > i);
        }
    }
}
