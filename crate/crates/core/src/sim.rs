//! Time-domain simulation of the full encoder.
//!
//! The transconductor is evaluated quasi-statically at every stage time; an
//! optional single-pole filter (pole `G_m / C_in`) can be placed between the
//! transconductor and the DPI. The neuron is integrated with fixed-step RK4.
//! A threshold crossing inside a step is located by bisecting the RK4 step
//! length, the spike is recorded at the upper end of the final interval, and
//! the membrane is reset and held for the refractory period.

use crate::error::{Error, Result};
use crate::neuron::NeuronConfig;
use crate::transconductor::TransconductorConfig;
use crate::device::SUPPLY_V;

/// Minimum and maximum automatic step.
const DT_MIN: f64 = 1e-9;
const DT_MAX: f64 = 1e-6;
/// Automatic step as a fraction of the membrane time constant.
const DT_PER_TAU: f64 = 1.0 / 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformKind {
    Dc,
    Sine,
    Triangle,
    PiecewiseLinear,
}

/// Differential input stimulus. `Dc` evaluates to `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub kind: WaveformKind,
    pub amplitude: f64,
    pub offset: f64,
    pub frequency: f64,
    /// `(time, voltage)` pairs for the piecewise-linear kind.
    pub breakpoints: Vec<(f64, f64)>,
}

impl Waveform {
    pub fn dc(level: f64) -> Self {
        Self { kind: WaveformKind::Dc, amplitude: 0.0, offset: level, frequency: 0.0, breakpoints: vec![] }
    }

    pub fn sine(amplitude: f64, offset: f64, frequency: f64) -> Self {
        Self { kind: WaveformKind::Sine, amplitude, offset, frequency, breakpoints: vec![] }
    }

    /// Starts at `offset`, peaks at a quarter period.
    pub fn triangle(amplitude: f64, offset: f64, frequency: f64) -> Self {
        Self { kind: WaveformKind::Triangle, amplitude, offset, frequency, breakpoints: vec![] }
    }

    pub fn piecewise_linear(breakpoints: Vec<(f64, f64)>) -> Self {
        Self { kind: WaveformKind::PiecewiseLinear, amplitude: 0.0, offset: 0.0, frequency: 0.0, breakpoints }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            WaveformKind::PiecewiseLinear => {
                if self.breakpoints.is_empty() {
                    return Err(Error::Domain("piecewise-linear waveform needs breakpoints".into()));
                }
                if self.breakpoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::Domain("breakpoints must be strictly time-sorted".into()));
                }
                if let Some(&(_, v)) = self.breakpoints.iter().find(|(t, v)| !t.is_finite() || !(v.abs() <= SUPPLY_V)) {
                    return Err(Error::Domain(format!("breakpoint voltage {v} outside the supply")));
                }
            }
            kind => {
                let peak = match kind {
                    WaveformKind::Dc => self.offset.abs(),
                    _ => self.offset.abs() + self.amplitude.abs(),
                };
                if !(peak <= SUPPLY_V) {
                    return Err(Error::Domain(format!("waveform peak {peak} V exceeds the supply")));
                }
                if kind != WaveformKind::Dc && !(self.frequency.is_finite() && self.frequency > 0.0) {
                    return Err(Error::Domain("periodic waveform needs a positive frequency".into()));
                }
            }
        }
        Ok(())
    }

    pub fn period(&self) -> Option<f64> {
        matches!(self.kind, WaveformKind::Sine | WaveformKind::Triangle).then(|| 1.0 / self.frequency)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("waveform evaluated at t = {t}")));
        }
        let phase = || (t * self.frequency).fract();
        Ok(match self.kind {
            WaveformKind::Dc => self.offset,
            WaveformKind::Sine => self.offset + self.amplitude * (std::f64::consts::TAU * phase()).sin(),
            WaveformKind::Triangle => {
                let p = phase();
                let shape = if p < 0.25 {
                    4.0 * p
                } else if p < 0.75 {
                    2.0 - 4.0 * p
                } else {
                    4.0 * p - 4.0
                };
                self.offset + self.amplitude * shape
            }
            WaveformKind::PiecewiseLinear => {
                let bp = &self.breakpoints;
                let first = bp.first().ok_or_else(|| Error::Domain("no breakpoints".into()))?;
                if t < first.0 {
                    return Err(Error::Domain(format!("t = {t} precedes the first breakpoint {}", first.0)));
                }
                match bp.iter().position(|&(tb, _)| tb > t) {
                    None => bp[bp.len() - 1].1,
                    Some(k) => {
                        let (t0, v0) = bp[k - 1];
                        let (t1, v1) = bp[k];
                        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                    }
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    /// Forward Euler with per-sample threshold checks, for verification.
    EulerOracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Base step; `None` picks `tau_m / 200` clamped to [1 ns, 1 us].
    pub dt: Option<f64>,
    pub event_tol: f64,
    pub method: Method,
    /// Store every `decimation`-th step in the trace.
    pub decimation: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { dt: None, event_tol: 1e-9, method: Method::Rk4, decimation: 10 }
    }
}

impl SolverConfig {
    pub fn resolve_dt(&self, neuron: &NeuronConfig) -> f64 {
        self.dt.unwrap_or_else(|| (neuron.tau_m() * DT_PER_TAU).clamp(DT_MIN, DT_MAX))
    }

    pub fn validate(&self, neuron: &NeuronConfig) -> Result<()> {
        let dt = self.resolve_dt(neuron);
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if !(self.event_tol > 0.0 && self.event_tol < dt) {
            return Err(Error::Domain(format!(
                "event_tol ({:e}) must be positive and below dt ({dt:e})",
                self.event_tol
            )));
        }
        if self.decimation == 0 {
            return Err(Error::Domain("decimation must be >= 1".into()));
        }
        Ok(())
    }
}

/// Transconductor feeding the neuron.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EncoderConfig {
    pub transconductor: TransconductorConfig,
    pub neuron: NeuronConfig,
    /// Neuron input capacitance for the optional transconductor pole (F).
    pub input_pole_c: Option<f64>,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.transconductor.validate()?;
        self.neuron.validate()?;
        if let Some(c) = self.input_pole_c {
            crate::error::ensure_positive("input_pole_c", c)?;
        }
        Ok(())
    }
}

/// Ordered spike timestamps (s).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeTrain {
    pub times: Vec<f64>,
}

impl SpikeTrain {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn intervals(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    pub fn count_in(&self, t_start: f64, t_end: f64) -> usize {
        self.times.iter().filter(|&&t| t >= t_start && t < t_end).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub v_id: f64,
    /// Current entering the DPI (after the optional pole).
    pub i_in: f64,
    pub i_mem: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub trace: Vec<TracePoint>,
    pub spikes: SpikeTrain,
    pub t_end: f64,
}

/// Quasi-static input source: waveform through the transconductor.
struct Drive<'a> {
    waveform: &'a Waveform,
    transconductor: &'a TransconductorConfig,
    constant: Option<(f64, f64)>,
}

impl<'a> Drive<'a> {
    fn new(encoder: &'a EncoderConfig, waveform: &'a Waveform) -> Result<Self> {
        let mut drive = Self { waveform, transconductor: &encoder.transconductor, constant: None };
        if waveform.kind == WaveformKind::Dc {
            drive.constant = Some(drive.eval_uncached(0.0)?);
        }
        Ok(drive)
    }

    fn eval_uncached(&self, t: f64) -> Result<(f64, f64)> {
        let v = self.waveform.eval(t)?;
        Ok((v, self.transconductor.neuron_input_current(v)?))
    }

    /// `(v_id, i_in)` at time `t`.
    fn eval(&self, t: f64) -> Result<(f64, f64)> {
        match self.constant {
            Some(c) => Ok(c),
            None => self.eval_uncached(t),
        }
    }
}

/// `[i_mem, i_filtered]`
type State = [f64; 2];

struct Dynamics<'a> {
    neuron: &'a NeuronConfig,
    drive: Drive<'a>,
    /// `G_m / C_in` when the input pole is enabled.
    pole_rate: Option<f64>,
}

impl Dynamics<'_> {
    fn new<'a>(encoder: &'a EncoderConfig, waveform: &'a Waveform) -> Result<Dynamics<'a>> {
        let pole_rate = match encoder.input_pole_c {
            Some(c) => Some(encoder.transconductor.effective_gm()? / c),
            None => None,
        };
        Ok(Dynamics { neuron: &encoder.neuron, drive: Drive::new(encoder, waveform)?, pole_rate })
    }

    fn initial(&self) -> Result<State> {
        let (_, i_in) = self.drive.eval(0.0)?;
        Ok([self.neuron.i_reset, i_in])
    }

    fn neuron_input(&self, y: &State, i_src: f64) -> f64 {
        if self.pole_rate.is_some() {
            y[1].max(0.0)
        } else {
            i_src
        }
    }

    fn derivative(&self, t: f64, y: &State, held: bool) -> Result<State> {
        let (_, i_src) = self.drive.eval(t)?;
        let d_mem = if held { 0.0 } else { self.neuron.derivative_unchecked(y[0], self.neuron_input(y, i_src)) };
        let d_filt = self.pole_rate.map_or(0.0, |w| (i_src - y[1]) * w);
        if !(d_mem.is_finite() && d_filt.is_finite()) {
            return Err(Error::Integration { time: t, reason: "non-finite derivative".into() });
        }
        Ok([d_mem, d_filt])
    }

    fn rk4(&self, t: f64, y: &State, h: f64, held: bool) -> Result<State> {
        let add = |a: &State, k: &State, s: f64| [a[0] + s * k[0], a[1] + s * k[1]];
        let k1 = self.derivative(t, y, held)?;
        let k2 = self.derivative(t + 0.5 * h, &add(y, &k1, 0.5 * h), held)?;
        let k3 = self.derivative(t + 0.5 * h, &add(y, &k2, 0.5 * h), held)?;
        let k4 = self.derivative(t + h, &add(y, &k3, h), held)?;
        Ok([
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ])
    }

    fn euler(&self, t: f64, y: &State, h: f64, held: bool) -> Result<State> {
        let k = self.derivative(t, y, held)?;
        Ok([y[0] + h * k[0], y[1] + h * k[1]])
    }

    fn trace_point(&self, t: f64, y: &State) -> Result<TracePoint> {
        let (v_id, i_src) = self.drive.eval(t)?;
        Ok(TracePoint { t, v_id, i_in: self.neuron_input(y, i_src), i_mem: y[0] })
    }
}

fn check_run(encoder: &EncoderConfig, input: &Waveform, t_end: f64) -> Result<()> {
    encoder.validate()?;
    input.validate()?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
    }
    Ok(())
}

/// Simulate the encoder from a freshly reset membrane over `[0, t_end]`.
pub fn transient(
    encoder: &EncoderConfig,
    input: &Waveform,
    t_end: f64,
    solver: &SolverConfig,
) -> Result<SimResult> {
    check_run(encoder, input, t_end)?;
    solver.validate(&encoder.neuron)?;
    let dt = solver.resolve_dt(&encoder.neuron);
    if solver.method == Method::EulerOracle {
        return integrate_euler(encoder, input, t_end, dt, solver.decimation);
    }

    let neuron = &encoder.neuron;
    let dyn_ = Dynamics::new(encoder, input)?;
    let mut y = dyn_.initial()?;
    let mut t = 0.0;
    let mut refractory = 0.0;
    let mut spikes = Vec::new();
    let mut trace = vec![dyn_.trace_point(t, &y)?];
    let mut steps = 0usize;

    while t < t_end {
        if refractory == 0.0 && y[0] >= neuron.i_th {
            spikes.push(t);
            y[0] = neuron.i_reset;
            refractory = neuron.t_rf;
        }
        let held = refractory > 0.0;
        let mut h = dt.min(t_end - t);
        if held {
            h = h.min(refractory);
        }
        let next = dyn_.rk4(t, &y, h, held)?;

        if !held && next[0] >= neuron.i_th {
            let (mut lo, mut hi) = (0.0, h);
            let mut crossed = next;
            while hi - lo > solver.event_tol {
                let mid = 0.5 * (lo + hi);
                let probe = dyn_.rk4(t, &y, mid, false)?;
                if probe[0] >= neuron.i_th {
                    hi = mid;
                    crossed = probe;
                } else {
                    lo = mid;
                }
            }
            t += hi;
            spikes.push(t);
            y = [neuron.i_reset, crossed[1]];
            refractory = neuron.t_rf;
        } else {
            t += h;
            y = next;
            if held {
                refractory = if h >= refractory { 0.0 } else { refractory - h };
            }
        }

        steps += 1;
        if steps % solver.decimation == 0 {
            trace.push(dyn_.trace_point(t.min(t_end), &y)?);
        }
    }

    Ok(SimResult { trace, spikes: SpikeTrain { times: spikes }, t_end })
}

/// Forward-Euler reference run at `dt_fine`.
pub fn oracle_transient(
    encoder: &EncoderConfig,
    input: &Waveform,
    t_end: f64,
    dt_fine: f64,
) -> Result<SimResult> {
    check_run(encoder, input, t_end)?;
    if !(dt_fine.is_finite() && dt_fine > 0.0) {
        return Err(Error::Domain(format!("dt_fine must be positive, got {dt_fine}")));
    }
    integrate_euler(encoder, input, t_end, dt_fine, 1000)
}

fn integrate_euler(
    encoder: &EncoderConfig,
    input: &Waveform,
    t_end: f64,
    dt: f64,
    decimation: usize,
) -> Result<SimResult> {
    let neuron = &encoder.neuron;
    let dyn_ = Dynamics::new(encoder, input)?;
    let mut y = dyn_.initial()?;
    let mut t = 0.0;
    let mut refractory = 0.0;
    let mut spikes = Vec::new();
    let mut trace = vec![dyn_.trace_point(t, &y)?];
    let mut steps = 0usize;

    while t < t_end {
        let held = refractory > 0.0;
        let mut h = dt.min(t_end - t);
        if held {
            h = h.min(refractory);
        }
        y = dyn_.euler(t, &y, h, held)?;
        t += h;
        if held {
            refractory = if h >= refractory { 0.0 } else { refractory - h };
        } else if y[0] >= neuron.i_th {
            spikes.push(t);
            y[0] = neuron.i_reset;
            refractory = neuron.t_rf;
        }
        steps += 1;
        if steps % decimation == 0 {
            trace.push(dyn_.trace_point(t.min(t_end), &y)?);
        }
    }

    Ok(SimResult { trace, spikes: SpikeTrain { times: spikes }, t_end })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::NeuronMode;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn linear_encoder() -> EncoderConfig {
        let mut e = EncoderConfig::default();
        e.neuron.mode = NeuronMode::Linear;
        e
    }

    #[test]
    fn waveform_values() {
        assert_eq!(Waveform::dc(0.3).eval(12.5).unwrap(), 0.3);
        let tri = Waveform::triangle(0.3, 0.0, 100.0);
        assert_relative_eq!(tri.eval(0.0025).unwrap(), 0.3, max_relative = 1e-12);
        assert_relative_eq!(tri.eval(0.0075).unwrap(), -0.3, max_relative = 1e-12);
        assert_eq!(Waveform::sine(0.2, 0.1, 50.0).eval(0.0).unwrap(), 0.1);
        let pwl = Waveform::piecewise_linear(vec![(1e-3, 0.0), (2e-3, 0.2)]);
        assert!(pwl.eval(0.0).is_err());
        assert_relative_eq!(pwl.eval(1.5e-3).unwrap(), 0.1, max_relative = 1e-12);
        assert_eq!(pwl.eval(5e-3).unwrap(), 0.2);
        assert!(Waveform::dc(0.0).eval(-1.0).is_err());
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::sine(0.4, 0.2, 10.0).validate().is_err());
        assert!(Waveform::triangle(0.3, 0.0, 0.0).validate().is_err());
        assert!(Waveform::piecewise_linear(vec![(1.0, 0.0), (0.5, 0.1)]).validate().is_err());
        assert!(Waveform::dc(0.5).validate().is_ok());
    }

    proptest! {
        #[test]
        fn periodic_kinds_repeat(t in 0.0f64..0.05, k in 1u32..20, f in 10.0f64..5000.0) {
            for w in [Waveform::sine(0.3, 0.1, f), Waveform::triangle(0.3, -0.1, f)] {
                let a = w.eval(t).unwrap();
                let b = w.eval(t + k as f64 / f).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn subthreshold_dc_settles_without_spikes() {
        let mut e = linear_encoder();
        e.neuron.i_th = 1e-10;
        let g = e.neuron.dpi_gain();
        let i_in = e.transconductor.neuron_input_current(0.0).unwrap();
        assert!(g * i_in < e.neuron.i_th);
        let tau = e.neuron.tau_m();
        let r = transient(&e, &Waveform::dc(0.0), 25.0 * tau, &SolverConfig::default()).unwrap();
        assert!(r.spikes.is_empty());
        let last = r.trace.last().unwrap();
        assert_relative_eq!(last.i_mem, g * i_in, max_relative = 1e-4);
    }

    #[test]
    fn zero_input_decay_follows_exponential() {
        let mut e = linear_encoder();
        e.transconductor.mirror_to_output = 1e-12;
        e.neuron.i_reset = 0.9 * e.neuron.i_th;
        let tau = e.neuron.tau_m();
        let solver = SolverConfig { decimation: 1, ..Default::default() };
        let r = transient(&e, &Waveform::dc(0.0), 3.0 * tau, &solver).unwrap();
        let i_floor = e.neuron.dpi_gain() * e.transconductor.neuron_input_current(0.0).unwrap();
        for p in r.trace.iter().step_by(50) {
            let expected = i_floor + (e.neuron.i_reset - i_floor) * (-p.t / tau).exp();
            assert_relative_eq!(p.i_mem, expected, max_relative = 1e-8);
        }
    }

    #[test]
    fn suprathreshold_interval_matches_closed_form() {
        let e = linear_encoder();
        let i_in = e.transconductor.neuron_input_current(0.2).unwrap();
        let rate = e.neuron.analytic_rate(i_in);
        assert!(rate > 0.0);
        let r = transient(&e, &Waveform::dc(0.2), 12.0 / rate, &SolverConfig::default()).unwrap();
        assert!(r.spikes.len() >= 10);
        for isi in r.spikes.intervals() {
            assert_relative_eq!(isi, 1.0 / rate, max_relative = 5e-3);
        }
    }

    #[test]
    fn deterministic_and_ordered() {
        let e = EncoderConfig::default();
        let w = Waveform::triangle(0.3, 0.0, 500.0);
        let s = SolverConfig::default();
        let a = transient(&e, &w, 4e-3, &s).unwrap();
        let b = transient(&e, &w, 4e-3, &s).unwrap();
        assert_eq!(a, b);
        assert!(!a.spikes.is_empty());
        for gap in a.spikes.intervals() {
            assert!(gap >= e.neuron.t_rf);
        }
        assert!(a.spikes.times.iter().all(|&t| t > 0.0 && t <= 4e-3));
        assert!(a.trace.windows(2).all(|w| w[1].t >= w[0].t));
    }

    #[test]
    fn no_post_threshold_blowup() {
        let e = EncoderConfig::default();
        let s = SolverConfig { decimation: 1, ..Default::default() };
        let dt = s.resolve_dt(&e.neuron);
        let r = transient(&e, &Waveform::dc(0.4), 2e-3, &s).unwrap();
        let i_in = e.transconductor.neuron_input_current(0.4).unwrap();
        let bound = e.neuron.i_th
            + dt * e.neuron.membrane_derivative(&crate::neuron::NeuronState { i_mem: e.neuron.i_th, refractory_remaining: 0.0 }, i_in).unwrap().abs();
        assert!(r.trace.iter().all(|p| p.i_mem <= bound));
    }

    #[test]
    fn oracle_and_solver_agree_on_empty_runs() {
        let e = EncoderConfig::default();
        let s = SolverConfig::default();
        let dt = s.resolve_dt(&e.neuron);
        let short = 5.0 * dt;
        assert!(transient(&e, &Waveform::dc(0.3), short, &s).unwrap().spikes.is_empty());
        assert!(oracle_transient(&e, &Waveform::dc(0.3), short, dt / 1000.0).unwrap().spikes.is_empty());
    }

    #[test]
    fn input_pole_delays_but_preserves_rate() {
        let plain = EncoderConfig::default();
        let filtered = EncoderConfig { input_pole_c: Some(150e-15), ..plain };
        let s = SolverConfig::default();
        let a = transient(&plain, &Waveform::dc(0.3), 3e-3, &s).unwrap();
        let b = transient(&filtered, &Waveform::dc(0.3), 3e-3, &s).unwrap();
        let diff = a.spikes.len() as i64 - b.spikes.len() as i64;
        assert!(diff.abs() <= 1, "{} vs {}", a.spikes.len(), b.spikes.len());
    }

    #[test]
    fn solver_validation() {
        let n = NeuronConfig::default();
        assert!(SolverConfig { event_tol: 1e-5, ..Default::default() }.validate(&n).is_err());
        assert!(SolverConfig { decimation: 0, ..Default::default() }.validate(&n).is_err());
        let dt = SolverConfig::default().resolve_dt(&n);
        assert!((1e-9..=1e-6).contains(&dt));
    }
}
