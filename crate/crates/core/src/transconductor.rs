//! Tail-less bulk-driven pair with a translinear linearization network.
//!
//! The input `v_id` reaches the output pair through the bulk, giving the
//! input argument `beta = (n - 1) v_id / (2 n U_T)`. The network drives the
//! output-pair gates with `V_B - V_A`, and the output pair sees
//!
//! ```text
//! alpha = (V_B - V_A) / (2 n U_T) - beta
//! I_out,diff = -2 I_3c sinh(alpha)
//! ```
//!
//! The network branches carry `2 I_3a sinh(alpha + beta)` and
//! `2 I_3b sinh(alpha - beta)`. Loading nodes A/B with `2 n U_T / (I_3a + I_3b)`
//! closes the loop:
//!
//! ```text
//! V_B - V_A = 4 n U_T / (I_3b + I_3a)
//!           * ((I_3b + I_3a) cosh(beta) sinh(alpha) + (I_3b - I_3a) cosh(alpha) sinh(beta))
//! ```
//!
//! which is solved for `V_B - V_A` by bracketed bisection and Newton polish.
//! The residual is strictly decreasing in `V_B - V_A` whenever
//! `|I_3b - I_3a| < I_3b + I_3a`, so the root is unique.

use crate::device::{DeviceParams, SUPPLY_V};
use crate::error::{ensure_finite, ensure_positive, Error, Result};

/// Probe step used for the small-signal transconductance.
pub const GM_PROBE_V: f64 = 1e-3;

const BRACKET_V: f64 = 0.5;
const MAX_ITERATIONS: usize = 200;
const BISECTION_WIDTH_V: f64 = 1e-7;
const ABS_TOL_V: f64 = 1e-12;
const REL_TOL: f64 = 1e-9;
/// Newton keeps polishing well below the acceptance tolerances.
const POLISH_REL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransconductorConfig {
    pub dev: DeviceParams,
    /// Reference current (A), regulated over 2-27 nA on silicon.
    pub i_ref: f64,
    /// `i_ref` to the mean quiescent current of the M3a/M3b branches.
    pub mirror_to_branch: f64,
    /// `i_ref` to the quiescent current of the output pair M3c/M4c.
    pub mirror_to_output: f64,
    /// Quiescent `(I_3b - I_3a) / (I_3b + I_3a)`; zero is symmetric bias.
    pub branch_imbalance: f64,
    /// Linearity tolerance on the output-pair sinh argument.
    pub epsilon: f64,
}

impl Default for TransconductorConfig {
    fn default() -> Self {
        Self {
            dev: DeviceParams::default(),
            i_ref: 8e-9,
            mirror_to_branch: 0.5,
            mirror_to_output: 0.5,
            branch_imbalance: 0.63,
            epsilon: 0.05,
        }
    }
}

/// Self-consistent operating point of the network at one input voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizationSolution {
    pub v_id: f64,
    /// Gate voltage of M3c (V).
    pub v_a: f64,
    /// Gate voltage of M4c (V).
    pub v_b: f64,
    /// Output-pair sinh argument.
    pub alpha: f64,
    /// Input-proportional argument `(n - 1) v_id / (2 n U_T)`.
    pub beta: f64,
    pub i_3a: f64,
    pub i_3b: f64,
    pub i_4a: f64,
    pub i_4b: f64,
    pub i_3c: f64,
    pub i_4c: f64,
    /// `I_D,4c - I_D,3c` (A).
    pub i_out_diff: f64,
    /// Relative residual of the loop equation at the returned point.
    pub residual: f64,
}

impl LinearizationSolution {
    pub fn v_ba(&self) -> f64 {
        self.v_b - self.v_a
    }
}

/// Residual of the loop equation in normalized units, `s - rhs(s)`, with
/// `s = (V_B - V_A)/(2 n U_T)`. Returns `(s, rhs)` so callers can form
/// absolute or relative residuals.
pub(crate) fn loop_terms(s: f64, beta: f64, imbalance: f64) -> (f64, f64) {
    let alpha = s - beta;
    let rhs = 2.0 * (beta.cosh() * alpha.sinh() + imbalance * alpha.cosh() * beta.sinh());
    (s, rhs)
}

fn loop_derivative(s: f64, beta: f64, imbalance: f64) -> f64 {
    let alpha = s - beta;
    1.0 - 2.0 * (beta.cosh() * alpha.cosh() + imbalance * alpha.sinh() * beta.sinh())
}

fn relative_residual(s: f64, rhs: f64) -> f64 {
    let scale = s.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (s - rhs).abs() / scale
    }
}

impl TransconductorConfig {
    pub fn validate(&self) -> Result<()> {
        self.dev.validate()?;
        ensure_positive("i_ref", self.i_ref)?;
        ensure_positive("mirror_to_branch", self.mirror_to_branch)?;
        ensure_positive("mirror_to_output", self.mirror_to_output)?;
        if !(self.branch_imbalance.is_finite() && self.branch_imbalance.abs() < 1.0) {
            return Err(Error::Domain(format!(
                "branch_imbalance must lie in (-1, 1), got {}",
                self.branch_imbalance
            )));
        }
        if !(0.03..=0.1).contains(&self.epsilon) {
            return Err(Error::Domain(format!(
                "epsilon must lie in [0.03, 0.1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn with_i_ref(&self, i_ref: f64) -> Self {
        Self { i_ref, ..*self }
    }

    /// Quiescent (I_3a, I_3b).
    pub fn branch_currents(&self) -> (f64, f64) {
        let mean = self.mirror_to_branch * self.i_ref;
        (mean * (1.0 - self.branch_imbalance), mean * (1.0 + self.branch_imbalance))
    }

    /// Quiescent current of each output-pair device.
    pub fn output_quiescent(&self) -> f64 {
        self.mirror_to_output * self.i_ref
    }

    pub fn beta(&self, v_id: f64) -> f64 {
        (self.dev.n - 1.0) * v_id / (2.0 * self.dev.n_ut())
    }

    fn check_input(&self, v_id: f64) -> Result<()> {
        ensure_finite("v_id", v_id)?;
        if v_id.abs() > SUPPLY_V {
            return Err(Error::Domain(format!(
                "|v_id| = {} V exceeds the {SUPPLY_V} V supply",
                v_id.abs()
            )));
        }
        Ok(())
    }

    /// Solve the network at `v_id`.
    pub fn solve_operating_point(&self, v_id: f64) -> Result<LinearizationSolution> {
        self.validate()?;
        self.check_input(v_id)?;
        let beta = self.beta(v_id);
        let s = self.solve_loop(beta)?;
        self.assemble(v_id, beta, s)
    }

    fn solve_loop(&self, beta: f64) -> Result<f64> {
        let two_nut = 2.0 * self.dev.n_ut();
        let gamma = self.branch_imbalance;
        let f = |s: f64| {
            let (lhs, rhs) = loop_terms(s, beta, gamma);
            lhs - rhs
        };

        let mut lo = -BRACKET_V / two_nut;
        let mut hi = BRACKET_V / two_nut;
        let (f_lo, f_hi) = (f(lo), f(hi));
        if !(f_lo > 0.0 && f_hi < 0.0) {
            return Err(Error::Domain(format!(
                "loop equation not bracketed on +/-{BRACKET_V} V at beta = {beta}"
            )));
        }

        let mut iterations = 0;
        while (hi - lo) * two_nut > BISECTION_WIDTH_V {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 {
                return Ok(mid);
            }
            if fm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        let mut s = 0.5 * (lo + hi);
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let (lhs, rhs) = loop_terms(s, beta, gamma);
            let r = lhs - rhs;
            if r == 0.0 || relative_residual(lhs, rhs) < POLISH_REL {
                return Ok(s);
            }
            if r > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let step = r / loop_derivative(s, beta, gamma);
            let mut next = s - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() * two_nut < ABS_TOL_V * 1e-3 {
                return Ok(next);
            }
            s = next;
        }

        let (lhs, rhs) = loop_terms(s, beta, gamma);
        let residual = relative_residual(lhs, rhs);
        if residual < REL_TOL || ((lhs - rhs) * two_nut).abs() < ABS_TOL_V {
            Ok(s)
        } else {
            Err(Error::NoConvergence { iterations, residual })
        }
    }

    fn assemble(&self, v_id: f64, beta: f64, s: f64) -> Result<LinearizationSolution> {
        let two_nut = 2.0 * self.dev.n_ut();
        let alpha = s - beta;
        let (q_a, q_b) = self.branch_currents();
        let q_c = self.output_quiescent();

        let i_3a = q_a * (-(alpha + beta)).exp();
        let i_4a = q_a * (alpha + beta).exp();
        let i_3b = q_b * (-(alpha - beta)).exp();
        let i_4b = q_b * (alpha - beta).exp();
        let i_3c = q_c * alpha.exp();
        let i_4c = q_c * (-alpha).exp();
        for (name, i) in [
            ("I_3a", i_3a),
            ("I_3b", i_3b),
            ("I_4a", i_4a),
            ("I_4b", i_4b),
            ("I_3c", i_3c),
            ("I_4c", i_4c),
        ] {
            if !(i.is_finite() && i >= f64::MIN_POSITIVE) {
                return Err(Error::Domain(format!("{name} = {i:e} A underflows at v_id = {v_id}")));
            }
        }

        let v_ba = s * two_nut;
        let v_gate = SUPPLY_V - self.dev.source_gate_voltage(q_c)?;
        let (lhs, rhs) = loop_terms(s, beta, self.branch_imbalance);
        Ok(LinearizationSolution {
            v_id,
            v_a: v_gate - 0.5 * v_ba,
            v_b: v_gate + 0.5 * v_ba,
            alpha,
            beta,
            i_3a,
            i_3b,
            i_4a,
            i_4b,
            i_3c,
            i_4c,
            i_out_diff: -2.0 * q_c * alpha.sinh(),
            residual: relative_residual(lhs, rhs),
        })
    }

    /// Relative residual of the loop equation at an arbitrary `V_B - V_A`.
    pub fn loop_residual(&self, v_id: f64, v_ba: f64) -> f64 {
        let s = v_ba / (2.0 * self.dev.n_ut());
        let (lhs, rhs) = loop_terms(s, self.beta(v_id), self.branch_imbalance);
        relative_residual(lhs, rhs)
    }

    /// Signed loop residual `(V_B - V_A) - rhs` in volts.
    pub fn loop_residual_signed(&self, v_id: f64, v_ba: f64) -> f64 {
        let two_nut = 2.0 * self.dev.n_ut();
        let (lhs, rhs) = loop_terms(v_ba / two_nut, self.beta(v_id), self.branch_imbalance);
        (lhs - rhs) * two_nut
    }

    /// Differential output current `I_D,4c - I_D,3c`.
    pub fn output_current(&self, v_id: f64) -> Result<f64> {
        Ok(self.solve_operating_point(v_id)?.i_out_diff)
    }

    /// Single-ended current delivered to the neuron, `max(I_Q + I_out,diff / 2, 0)`.
    pub fn neuron_input_current(&self, v_id: f64) -> Result<f64> {
        let i_out = self.output_current(v_id)?;
        Ok((self.output_quiescent() + 0.5 * i_out).max(0.0))
    }

    /// The output pair with the network disabled (`V_B = V_A`).
    pub fn raw_pair_output_current(&self, v_id: f64) -> Result<f64> {
        self.validate()?;
        self.check_input(v_id)?;
        Ok(2.0 * self.output_quiescent() * self.beta(v_id).sinh())
    }

    /// Centered-difference slope of the output current at `v_id = 0`.
    pub fn effective_gm(&self) -> Result<f64> {
        let up = self.output_current(GM_PROBE_V)?;
        let down = self.output_current(-GM_PROBE_V)?;
        Ok((up - down) / (2.0 * GM_PROBE_V))
    }

    /// Slack of the sufficient linearity condition
    /// `|I_3b - I_3a|/(I_3b + I_3a) <= (|beta| + eps) / (2 |sinh beta|)`.
    /// Non-negative when the condition holds; `+inf` at `beta = 0`.
    pub fn linearity_constraint_margin(&self, v_id: f64) -> Result<f64> {
        self.solve_operating_point(v_id)?;
        let beta = self.beta(v_id);
        let (q_a, q_b) = self.branch_currents();
        let lhs = (q_b - q_a).abs() / (q_b + q_a);
        if beta == 0.0 {
            return Ok(f64::INFINITY);
        }
        let rhs = (beta.abs() + self.epsilon) / (2.0 * beta.sinh().abs());
        Ok(rhs - lhs)
    }

    /// Output current at each grid voltage.
    pub fn dc_sweep(&self, v_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
        if v_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Precondition("dc sweep grid must be sorted".into()));
        }
        v_grid
            .iter()
            .map(|&v| {
                self.output_current(v)
                    .map(|i| (v, i))
                    .map_err(|e| Error::SweepPoint { v_id: v, source: Box::new(e) })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> TransconductorConfig {
        TransconductorConfig::default()
    }

    #[test]
    fn zero_input_is_the_symmetric_point() {
        for gamma in [0.0, 0.3, 0.63] {
            let c = TransconductorConfig { branch_imbalance: gamma, ..cfg() };
            let sol = c.solve_operating_point(0.0).unwrap();
            assert_eq!(sol.v_ba(), 0.0);
            assert_eq!(sol.alpha, 0.0);
            assert_eq!(sol.i_out_diff, 0.0);
            assert_eq!(c.raw_pair_output_current(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn residual_is_tiny_everywhere() {
        let c = cfg();
        for k in -50..=50 {
            let v = 0.01 * k as f64;
            let sol = c.solve_operating_point(v).unwrap();
            assert!(sol.residual < 1e-9, "v = {v}: {}", sol.residual);
            assert_relative_eq!(
                sol.i_out_diff,
                -2.0 * c.output_quiescent() * sol.alpha.sinh(),
                max_relative = 1e-15
            );
        }
    }

    /// Independent root location: scan the signed residual on a uniform
    /// grid of `V_B - V_A` and report the cell holding the sign change.
    fn dense_grid_root(c: &TransconductorConfig, v_id: f64, points: usize) -> (f64, f64) {
        let step = 2.0 * BRACKET_V / (points - 1) as f64;
        let mut prev = c.loop_residual_signed(v_id, -BRACKET_V);
        for k in 1..points {
            let x = -BRACKET_V + step * k as f64;
            let r = c.loop_residual_signed(v_id, x);
            if prev.signum() != r.signum() || r == 0.0 {
                return (x - step, x);
            }
            prev = r;
        }
        panic!("no sign change");
    }

    #[test]
    fn solution_sits_in_dense_grid_cell() {
        let c = cfg();
        for v in [-0.37, 0.05, 0.22] {
            let (lo, hi) = dense_grid_root(&c, v, 100_001);
            let sol = c.solve_operating_point(v).unwrap();
            let cell = hi - lo;
            assert!(sol.v_ba() >= lo - cell && sol.v_ba() <= hi + cell, "v = {v}");
        }
    }

    #[test]
    fn raw_pair_small_signal_slope() {
        let c = cfg();
        let h = 1e-7;
        let slope = (c.raw_pair_output_current(h).unwrap() - c.raw_pair_output_current(-h).unwrap())
            / (2.0 * h);
        let expected = 2.0 * c.output_quiescent() * (c.dev.n - 1.0) / (2.0 * c.dev.n_ut());
        assert_relative_eq!(slope, expected, max_relative = 1e-6);
    }

    #[test]
    fn gm_tracks_reference_current() {
        let c = cfg();
        let low = c.with_i_ref(2e-9).effective_gm().unwrap();
        let high = c.with_i_ref(27e-9).effective_gm().unwrap();
        assert!(high > low && low > 0.0);
        assert!((1.56e-9 * 0.8..=1.56e-9 * 1.2).contains(&low), "gm(2 nA) = {low:e}");
        assert!((22e-9 * 0.8..=22e-9 * 1.2).contains(&high), "gm(27 nA) = {high:e}");
        let mut prev = 0.0;
        for k in 0..=25 {
            let gm = c.with_i_ref(2e-9 + 1e-9 * k as f64).effective_gm().unwrap();
            assert!(gm > prev);
            prev = gm;
        }
    }

    #[test]
    fn output_follows_small_signal_slope() {
        let c = cfg();
        let gm = c.effective_gm().unwrap();
        for k in 1..=20 {
            let v = 0.01 * k as f64;
            let i = c.output_current(v).unwrap();
            assert!((i - gm * v).abs() <= 0.02 * (gm * v).abs(), "v = {v}: {}", i / (gm * v) - 1.0);
        }
    }

    #[test]
    fn margin_behaviour() {
        let sym = TransconductorConfig { branch_imbalance: 0.0, ..cfg() };
        assert!(sym.linearity_constraint_margin(0.3).unwrap() > 0.0);
        assert_eq!(cfg().linearity_constraint_margin(0.0).unwrap(), f64::INFINITY);
        let c = cfg();
        let mut prev = f64::INFINITY;
        for k in 1..=50 {
            let m = c.linearity_constraint_margin(0.01 * k as f64).unwrap();
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn epsilon_bounds_are_inclusive() {
        assert!(TransconductorConfig { epsilon: 0.03, ..cfg() }.validate().is_ok());
        assert!(TransconductorConfig { epsilon: 0.1, ..cfg() }.validate().is_ok());
        assert!(TransconductorConfig { epsilon: 0.029, ..cfg() }.validate().is_err());
        assert!(TransconductorConfig { epsilon: 0.11, ..cfg() }.validate().is_err());
    }

    #[test]
    fn sweep_matches_pointwise_calls() {
        let c = cfg();
        let grid = [-0.25, 0.0, 0.25];
        let sweep = c.dc_sweep(&grid).unwrap();
        for (v, i) in &sweep {
            assert_eq!(*i, c.output_current(*v).unwrap());
        }
        assert_relative_eq!(sweep[0].1, -sweep[2].1, max_relative = 1e-9);
        assert!(c.dc_sweep(&[0.1, 0.0]).is_err());
        let err = c.dc_sweep(&[0.0, 0.7]).unwrap_err();
        assert!(matches!(err, Error::SweepPoint { v_id, .. } if v_id == 0.7));
    }

    #[test]
    fn out_of_supply_input_rejected() {
        assert!(cfg().solve_operating_point(0.51).is_err());
        assert!(cfg().solve_operating_point(f64::INFINITY).is_err());
    }

    #[test]
    fn branch_currents_positive() {
        let sol = cfg().solve_operating_point(0.5).unwrap();
        for i in [sol.i_3a, sol.i_3b, sol.i_4a, sol.i_4b, sol.i_3c, sol.i_4c] {
            assert!(i > 0.0);
        }
    }

    proptest! {
        #[test]
        fn transfer_is_odd(v in 0.0f64..0.5, gamma in 0.0f64..0.95, i_ref in 1e-9f64..30e-9) {
            let c = TransconductorConfig { branch_imbalance: gamma, i_ref, ..cfg() };
            let p = c.solve_operating_point(v).unwrap();
            let m = c.solve_operating_point(-v).unwrap();
            let scale = p.i_out_diff.abs().max(1e-30);
            prop_assert!((p.i_out_diff + m.i_out_diff).abs() <= 1e-9 * scale);
            let vscale = p.v_ba().abs().max(1e-30);
            prop_assert!((p.v_ba() + m.v_ba()).abs() <= 1e-9 * vscale);
        }
    }
}
