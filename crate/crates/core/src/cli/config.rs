//! Experiment configuration files.
//!
//! A config is TOML restricted to flat sections of scalar keys. Every
//! physical key carries its SI unit as a suffix (`_a`, `_v`, `_s`, `_f`,
//! `_hz`). Missing sections and keys take the library defaults.

use serde::{Deserialize, Serialize};

use crate::analysis::{Normalization, PowerModel, Transfer, VfSettings, DEFAULT_HARMONICS};
use crate::device::DeviceParams;
use crate::neuron::{GainConvention, NeuronBias, NeuronConfig, NeuronMode};
use crate::sim::{EncoderConfig, Method, SolverConfig, Waveform};
use crate::transconductor::TransconductorConfig;
use crate::tuner::{ObjectiveKind, TuneSpec, TuneVariable, VariableBound};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub device: DeviceSection,
    pub transconductor: TransconductorSection,
    pub neuron: NeuronSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasSection>,
    pub solver: SolverSection,
    pub dc_sweep: DcSweepSection,
    pub waveform: WaveformSection,
    pub transient: TransientSection,
    pub vf_curve: VfCurveSection,
    pub thd: ThdSection,
    pub freq: FreqSection,
    pub power: PowerSection,
    pub tune: TuneSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            device: DeviceSection::default(),
            transconductor: TransconductorSection::default(),
            neuron: NeuronSection::default(),
            bias: None,
            solver: SolverSection::default(),
            dc_sweep: DcSweepSection::default(),
            waveform: WaveformSection::default(),
            transient: TransientSection::default(),
            vf_curve: VfCurveSection::default(),
            thd: ThdSection::default(),
            freq: FreqSection::default(),
            power: PowerSection::default(),
            tune: TuneSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub i_spec_a: f64,
    pub w_over_l: f64,
    pub n: f64,
    pub u_t_v: f64,
    pub v_t0_v: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        let d = DeviceParams::default();
        Self { i_spec_a: d.i_spec, w_over_l: d.w_over_l, n: d.n, u_t_v: d.u_t, v_t0_v: d.v_t0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransconductorSection {
    pub i_ref_a: f64,
    pub mirror_to_branch: f64,
    pub mirror_to_output: f64,
    pub branch_imbalance: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_pole_c_f: Option<f64>,
}

impl Default for TransconductorSection {
    fn default() -> Self {
        let t = TransconductorConfig::default();
        Self {
            i_ref_a: t.i_ref,
            mirror_to_branch: t.mirror_to_branch,
            mirror_to_output: t.mirror_to_output,
            branch_imbalance: t.branch_imbalance,
            epsilon: t.epsilon,
            input_pole_c_f: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Nonlinear,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainName {
    Derived,
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronSection {
    pub c_m_f: f64,
    pub i_g_a: f64,
    pub i_r_a: f64,
    pub i_th_a: f64,
    pub i_reset_a: f64,
    pub t_rf_s: f64,
    pub mode: ModeName,
    pub i_pf_gain: f64,
    pub gain_convention: GainName,
}

impl Default for NeuronSection {
    fn default() -> Self {
        let n = NeuronConfig::default();
        Self {
            c_m_f: n.c_m,
            i_g_a: n.i_g,
            i_r_a: n.i_r,
            i_th_a: n.i_th,
            i_reset_a: n.i_reset,
            t_rf_s: n.t_rf,
            mode: ModeName::Nonlinear,
            i_pf_gain: n.i_pf_gain,
            gain_convention: GainName::Derived,
        }
    }
}

/// Bench bias voltages; when present they replace the neuron's `i_g`,
/// `i_r`, `i_th` and `i_reset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSection {
    pub v_tu_v: f64,
    pub v_lk_v: f64,
    pub v_th_v: f64,
    pub i_mem_ref_a: f64,
}

impl Default for BiasSection {
    fn default() -> Self {
        let b = NeuronBias::default();
        Self { v_tu_v: b.v_tu, v_lk_v: b.v_lk, v_th_v: b.v_th, i_mem_ref_a: b.i_mem_ref }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Rk4,
    EulerOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Zero selects the automatic step.
    pub dt_s: f64,
    pub event_tol_s: f64,
    pub method: MethodName,
    pub decimation: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self { dt_s: 0.0, event_tol_s: s.event_tol, method: MethodName::Rk4, decimation: s.decimation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcSweepSection {
    pub v_start_v: f64,
    pub v_stop_v: f64,
    pub points: usize,
}

impl Default for DcSweepSection {
    fn default() -> Self {
        Self { v_start_v: -0.5, v_stop_v: 0.5, points: 101 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformName {
    Dc,
    Sine,
    Triangle,
    PiecewiseLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub kind: WaveformName,
    pub amplitude_v: f64,
    pub offset_v: f64,
    pub frequency_hz: f64,
    /// `[time_s, voltage_v]` pairs for the piecewise-linear kind.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub breakpoints: Vec<[f64; 2]>,
}

impl Default for WaveformSection {
    fn default() -> Self {
        Self { kind: WaveformName::Sine, amplitude_v: 0.25, offset_v: 0.0, frequency_hz: 100.0, breakpoints: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientSection {
    pub t_end_s: f64,
}

impl Default for TransientSection {
    fn default() -> Self {
        Self { t_end_s: 20e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationName {
    WindowTop,
    FullScaleSpan,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VfCurveSection {
    pub v_start_v: f64,
    pub v_stop_v: f64,
    pub points: usize,
    pub settle_time_s: f64,
    pub measure_time_s: f64,
    pub window_lo_v: f64,
    pub window_hi_v: f64,
    pub normalization: NormalizationName,
}

impl Default for VfCurveSection {
    fn default() -> Self {
        let v = VfSettings::default();
        Self {
            v_start_v: v.v_grid[0],
            v_stop_v: *v.v_grid.last().unwrap_or(&0.5),
            points: v.v_grid.len(),
            settle_time_s: v.settle_time,
            measure_time_s: v.measure_time,
            window_lo_v: v.window.0,
            window_hi_v: v.window.1,
            normalization: NormalizationName::WindowTop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferName {
    Linearized,
    RawPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThdSection {
    pub amplitude_v: f64,
    pub samples_per_period: usize,
    pub harmonics: usize,
    pub transfer: TransferName,
}

impl Default for ThdSection {
    fn default() -> Self {
        Self { amplitude_v: 0.25, samples_per_period: 256, harmonics: DEFAULT_HARMONICS, transfer: TransferName::Linearized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreqSection {
    pub i_ref_list_a: Vec<f64>,
    /// Early voltage setting the output resistance `v_early / I_out`.
    pub v_early_v: f64,
    pub c_load_f: f64,
}

impl Default for FreqSection {
    fn default() -> Self {
        Self { i_ref_list_a: vec![2e-9, 8e-9, 27e-9], v_early_v: 18.0, c_load_f: 20e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    pub i_ref_list_a: Vec<f64>,
    pub f_spike_list_hz: Vec<f64>,
    pub vdd_v: f64,
    pub k_static: f64,
    pub i_neuron_static_a: f64,
    pub c_dyn_f: f64,
}

impl Default for PowerSection {
    fn default() -> Self {
        let p = PowerModel::default();
        Self {
            i_ref_list_a: vec![2e-9, 8e-9, 27e-9],
            f_spike_list_hz: vec![1e3, 1e4, 4e4],
            vdd_v: p.vdd,
            k_static: p.k_static,
            i_neuron_static_a: p.i_neuron_static,
            c_dyn_f: p.c_dyn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub variables: Vec<String>,
    pub i_ref_bounds_a: [f64; 2],
    pub i_g_bounds_a: [f64; 2],
    pub i_r_bounds_a: [f64; 2],
    pub i_th_bounds_a: [f64; 2],
    pub t_rf_bounds_s: [f64; 2],
    pub objective: String,
    pub budget: usize,
    pub seed: u64,
    pub voltage_domain: bool,
    pub power_weight: f64,
}

impl Default for TuneSection {
    fn default() -> Self {
        let spec = TuneSpec::default();
        let bound = |v: TuneVariable, fallback: [f64; 2]| {
            spec.variables.iter().find(|b| b.variable == v).map(|b| [b.lo, b.hi]).unwrap_or(fallback)
        };
        Self {
            variables: spec.variables.iter().map(|b| b.variable.name().to_string()).collect(),
            i_ref_bounds_a: bound(TuneVariable::IRef, [2e-9, 27e-9]),
            i_g_bounds_a: bound(TuneVariable::IG, [0.5e-12, 10e-12]),
            i_r_bounds_a: bound(TuneVariable::IR, [100e-12, 1e-9]),
            i_th_bounds_a: bound(TuneVariable::ITh, [5e-12, 80e-12]),
            t_rf_bounds_s: bound(TuneVariable::TRf, [1e-6, 50e-6]),
            objective: spec.objective.name().to_string(),
            budget: spec.budget,
            seed: spec.seed,
            voltage_domain: spec.voltage_domain,
            power_weight: spec.power_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// CSV destination; empty means `<command>.csv` in the working directory.
    pub path: String,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn device(&self) -> DeviceParams {
        let d = &self.device;
        DeviceParams { i_spec: d.i_spec_a, w_over_l: d.w_over_l, n: d.n, u_t: d.u_t_v, v_t0: d.v_t0_v }
    }

    pub fn encoder(&self) -> Result<EncoderConfig, ConfigError> {
        let dev = self.device();
        let t = &self.transconductor;
        let n = &self.neuron;
        let transconductor = TransconductorConfig {
            dev,
            i_ref: t.i_ref_a,
            mirror_to_branch: t.mirror_to_branch,
            mirror_to_output: t.mirror_to_output,
            branch_imbalance: t.branch_imbalance,
            epsilon: t.epsilon,
        };
        let mut neuron = NeuronConfig {
            c_m: n.c_m_f,
            i_g: n.i_g_a,
            i_r: n.i_r_a,
            i_th: n.i_th_a,
            i_reset: n.i_reset_a,
            t_rf: n.t_rf_s,
            n: dev.n,
            u_t: dev.u_t,
            mode: match n.mode {
                ModeName::Nonlinear => NeuronMode::Nonlinear,
                ModeName::Linear => NeuronMode::Linear,
            },
            i_pf_gain: n.i_pf_gain,
            gain_convention: match n.gain_convention {
                GainName::Derived => GainConvention::Derived,
                GainName::Printed => GainConvention::Printed,
            },
        };
        if let Some(b) = &self.bias {
            let bias = NeuronBias { v_tu: b.v_tu_v, v_lk: b.v_lk_v, v_th: b.v_th_v, i_mem_ref: b.i_mem_ref_a };
            neuron = bias.apply(&dev, &neuron).map_err(|e| ConfigError::Invalid(format!("bias: {e}")))?;
        }
        let encoder = EncoderConfig { transconductor, neuron, input_pole_c: t.input_pole_c_f };
        dev.validate().map_err(|e| ConfigError::Invalid(format!("device: {e}")))?;
        encoder.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(encoder)
    }

    pub fn solver(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: (s.dt_s > 0.0).then_some(s.dt_s),
            event_tol: s.event_tol_s,
            method: match s.method {
                MethodName::Rk4 => Method::Rk4,
                MethodName::EulerOracle => Method::EulerOracle,
            },
            decimation: s.decimation,
        }
    }

    pub fn waveform(&self) -> Waveform {
        let w = &self.waveform;
        match w.kind {
            WaveformName::Dc => Waveform::dc(w.offset_v),
            WaveformName::Sine => Waveform::sine(w.amplitude_v, w.offset_v, w.frequency_hz),
            WaveformName::Triangle => Waveform::triangle(w.amplitude_v, w.offset_v, w.frequency_hz),
            WaveformName::PiecewiseLinear => {
                Waveform::piecewise_linear(w.breakpoints.iter().map(|p| (p[0], p[1])).collect())
            }
        }
    }

    pub fn dc_grid(&self) -> Result<Vec<f64>, ConfigError> {
        let s = &self.dc_sweep;
        linspace(s.v_start_v, s.v_stop_v, s.points).ok_or_else(|| ConfigError::Invalid("dc_sweep grid".into()))
    }

    pub fn vf_settings(&self) -> Result<VfSettings, ConfigError> {
        let s = &self.vf_curve;
        let settings = VfSettings {
            v_grid: linspace(s.v_start_v, s.v_stop_v, s.points)
                .ok_or_else(|| ConfigError::Invalid("vf_curve grid".into()))?,
            settle_time: s.settle_time_s,
            measure_time: s.measure_time_s,
            window: (s.window_lo_v, s.window_hi_v),
            normalization: match s.normalization {
                NormalizationName::WindowTop => Normalization::WindowTop,
                NormalizationName::FullScaleSpan => Normalization::FullScaleSpan,
                NormalizationName::Pointwise => Normalization::Pointwise,
            },
        };
        settings.validate().map_err(|e| ConfigError::Invalid(format!("vf_curve: {e}")))?;
        Ok(settings)
    }

    pub fn transfer(&self) -> Transfer {
        match self.thd.transfer {
            TransferName::Linearized => Transfer::Linearized,
            TransferName::RawPair => Transfer::RawPair,
        }
    }

    pub fn power_model(&self) -> PowerModel {
        let p = &self.power;
        PowerModel { vdd: p.vdd_v, k_static: p.k_static, i_neuron_static: p.i_neuron_static_a, c_dyn: p.c_dyn_f }
    }

    pub fn tune_spec(&self) -> Result<TuneSpec, ConfigError> {
        let t = &self.tune;
        let variables = t
            .variables
            .iter()
            .map(|name| {
                let variable = TuneVariable::parse(name)
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown tune variable `{name}`")))?;
                let [lo, hi] = match variable {
                    TuneVariable::IRef => t.i_ref_bounds_a,
                    TuneVariable::IG => t.i_g_bounds_a,
                    TuneVariable::IR => t.i_r_bounds_a,
                    TuneVariable::ITh => t.i_th_bounds_a,
                    TuneVariable::TRf => t.t_rf_bounds_s,
                };
                Ok(VariableBound { variable, lo, hi })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let spec = TuneSpec {
            variables,
            objective: ObjectiveKind::parse(&t.objective)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown tune objective `{}`", t.objective)))?,
            budget: t.budget,
            seed: t.seed,
            voltage_domain: t.voltage_domain,
            vf: self.vf_settings()?,
            solver: self.solver(),
            power_model: self.power_model(),
            power_weight: t.power_weight,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(format!("tune: {e}")))?;
        Ok(spec)
    }
}

fn linspace(start: f64, stop: f64, points: usize) -> Option<Vec<f64>> {
    match points {
        0 => None,
        1 => Some(vec![start]),
        _ if !(stop > start) => None,
        _ => Some((0..points).map(|k| start + (stop - start) * k as f64 / (points - 1) as f64).collect()),
    }
}

/// Apply `section.key=value`, parsing `value` as a TOML value and falling
/// back to a bare string.
fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Parse(format!("override `{text}` must look like section.key=value"));
    let (path, raw) = text.split_once('=').ok_or_else(bad)?;
    let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
    if section.is_empty() || key.is_empty() || key.contains('.') {
        return Err(bad());
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(section_table) = entry else {
        return Err(ConfigError::Parse(format!("`{section}` is not a section")));
    };
    section_table.insert(key.to_string(), value);
    Ok(())
}
