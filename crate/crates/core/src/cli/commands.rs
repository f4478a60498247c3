//! One function per subcommand, each producing CSV text and a summary.

use std::fmt::Write as _;

use super::config::ExperimentConfig;
use super::{Command, Failure, Output};
use crate::analysis::{
    output_resistance, power_estimate, small_signal, transconductor_thd, vf_curve, Transfer,
};
use crate::device::SUPPLY_V;
use crate::error::Error;
use crate::sim::{transient, EncoderConfig};
use crate::tuner::{tune, TuneVariable};

/// Nine significant digits, scientific.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn invalid(e: Error) -> Failure {
    Failure::Validation(e.to_string())
}

pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<Output, Failure> {
    let encoder = cfg.encoder()?;
    match command {
        Command::DcSweep => dc_sweep(cfg, &encoder),
        Command::Transient => run_transient(cfg, &encoder),
        Command::VfCurve => run_vf_curve(cfg, &encoder),
        Command::Thd => run_thd(cfg, &encoder),
        Command::Freq => run_freq(cfg, &encoder),
        Command::Power => run_power(cfg, &encoder),
        Command::Tune => run_tune(cfg, &encoder),
    }
}

fn dc_sweep(cfg: &ExperimentConfig, encoder: &EncoderConfig) -> Result<Output, Failure> {
    let grid = cfg.dc_grid()?;
    if grid.iter().any(|v| v.abs() > SUPPLY_V) {
        return Err(Failure::Validation(format!("dc_sweep grid must stay within +/-{SUPPLY_V} V")));
    }
    let tc = &encoder.transconductor;
    let rows = tc.dc_sweep(&grid).map_err(runtime)?;
    let gm = tc.effective_gm().map_err(runtime)?;
    let peak = rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
    let mut summary = String::new();
    let _ = writeln!(summary, "dc-sweep: {} points over [{}, {}] V", rows.len(), grid[0], grid[grid.len() - 1]);
    let _ = writeln!(summary, "effective Gm: {} A/V at i_ref = {} A", num(gm), num(tc.i_ref));
    let _ = writeln!(summary, "peak |i_out|: {} A", num(peak));
    Ok(Output {
        csv: csv("v_id_v,i_out_a", rows.iter().map(|&(v, i)| vec![num(v), num(i)])),
        summary,
        siblings: vec![],
    })
}

fn run_transient(cfg: &ExperimentConfig, encoder: &EncoderConfig) -> Result<Output, Failure> {
    let input = cfg.waveform();
    input.validate().map_err(invalid)?;
    let solver = cfg.solver();
    solver.validate(&encoder.neuron).map_err(invalid)?;
    let t_end = cfg.transient.t_end_s;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Failure::Validation(format!("transient.t_end_s must be positive, got {t_end}")));
    }
    let run = transient(encoder, &input, t_end, &solver).map_err(runtime)?;
    let spikes = &run.spikes.times;
    let mut summary = String::new();
    let _ = writeln!(summary, "transient: {} s, {} trace rows", num(t_end), run.trace.len());
    let _ = writeln!(summary, "spikes: {}, mean rate {} Hz", spikes.len(), num(spikes.len() as f64 / t_end));
    if let (Some(first), Some(last)) = (spikes.first(), spikes.last()) {
        let _ = writeln!(summary, "first spike {} s, last spike {} s", num(*first), num(*last));
    }
    let spike_file = spikes.iter().map(|t| format!("{}\n", num(*t))).collect();
    Ok(Output {
        csv: csv(
            "t_s,v_id_v,i_in_a,i_mem_a",
            run.trace.iter().map(|p| vec![num(p.t), num(p.v_id), num(p.i_in), num(p.i_mem)]),
        ),
        summary,
        siblings: vec![("spikes", spike_file)],
    })
}

fn run_vf_curve(cfg: &ExperimentConfig, encoder: &EncoderConfig) -> Result<Output, Failure> {
    let settings = cfg.vf_settings()?;
    let solver = cfg.solver();
    solver.validate(&encoder.neuron).map_err(invalid)?;
    let curve = vf_curve(encoder, &settings, &solver).map_err(runtime)?;
    let (lo, hi) = settings.window;
    let mut summary = String::new();
    match curve.fit {
        Some(fit) => {
            let _ = writeln!(
                summary,
                "max deviation over ({lo}, {hi}) V: {:.3} %",
                100.0 * fit.max_deviation_fraction
            );
            let _ = writeln!(summary, "fit: rate = {} + {} * v_in Hz", num(fit.intercept), num(fit.slope));
            if let Some(top) = curve.points.last() {
                let _ = writeln!(
                    summary,
                    "rate at {} V: {} Hz (fit {} Hz)",
                    top.v_in,
                    num(top.rate),
                    num(fit.at(top.v_in))
                );
            }
        }
        None => {
            let _ = writeln!(summary, "max deviation over ({lo}, {hi}) V: unavailable (too few usable points)");
        }
    }
    let rates = curve.points.iter().map(|p| p.rate);
    let (min, max) = rates.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
    let _ = writeln!(summary, "rate range: {} .. {} Hz", num(min), num(max));
    for w in &curve.warnings {
        let _ = writeln!(summary, "warning: {w}");
    }
    Ok(Output {
        csv: csv(
            "v_in_v,rate_hz,in_window,flagged",
            curve.points.iter().map(|p| {
                vec![num(p.v_in), num(p.rate), u8::from(p.in_window).to_string(), u8::from(p.flagged).to_string()]
            }),
        ),
        summary,
        siblings: vec![],
    })
}

fn run_thd(cfg: &ExperimentConfig, encoder: &EncoderConfig) -> Result<Output, Failure> {
    let t = &cfg.thd;
    if !(t.amplitude_v > 0.0 && t.amplitude_v <= SUPPLY_V) {
        return Err(Failure::Validation(format!("thd.amplitude_v must lie in (0, {SUPPLY_V}] V")));
    }
    if t.samples_per_period < 2 * (t.harmonics + 1) || t.harmonics == 0 {
        return Err(Failure::Validation("thd.samples_per_period must be >= 2 (harmonics + 1)".into()));
    }
    let tc = &encoder.transconductor;
    let chosen = cfg.transfer();
    let report = transconductor_thd(tc, chosen, t.amplitude_v, t.samples_per_period, t.harmonics).map_err(runtime)?;
    let other = match chosen {
        Transfer::Linearized => Transfer::RawPair,
        Transfer::RawPair => Transfer::Linearized,
    };
    let reference = transconductor_thd(tc, other, t.amplitude_v, t.samples_per_period, t.harmonics).map_err(runtime)?;
    let label = |x: Transfer| match x {
        Transfer::Linearized => "linearized",
        Transfer::RawPair => "raw pair",
    };
    let mut summary = String::new();
    let _ = writeln!(summary, "THD ({}) at {} V amplitude: {:.4} %", label(chosen), t.amplitude_v, report.thd_percent());
    let _ = writeln!(summary, "THD ({}) for comparison: {:.4} %", label(other), reference.thd_percent());
    let rows = std::iter::once(report.fundamental_amplitude)
        .chain(report.harmonic_amplitudes.iter().copied())
        .enumerate()
        .map(|(k, a)| vec![(k + 1).to_string(), num(a)]);
    Ok(Output { csv: csv("harmonic_index,amplitude_a", rows), summary, siblings: vec![] })
}

fn run_freq(cfg: &ExperimentConfig, encoder: &EncoderConfig) -> Result<Output, Failure> {
    let f = &cfg.freq;
    if f.i_ref_list_a.is_empty() || f.i_ref_list_a.iter().any(|i| !(*i > 0.0)) {
        return Err(Failure::Validation("freq.i_ref_list_a needs positive currents".into()));
    }
    if !(f.v_early_v > 0.0 && f.c_load_f > 0.0) {
        return Err(Failure::Validation("freq.v_early_v and freq.c_load_f must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut summary = String::new();
    for &i_ref in &f.i_ref_list_a {
        let tc = encoder.transconductor.with_i_ref(i_ref);
        let s = small_signal(&tc, output_resistance(&tc, f.v_early_v), f.c_load_f).map_err(runtime)?;
        let _ = writeln!(
            summary,
            "i_ref {} A: Gm {} A/V, gain {:.2} dB, f_unity {:.2} Hz",
            num(i_ref),
            num(s.gm),
            s.dc_gain_db,
            s.f_unity_hz
        );
        rows.push(vec![num(i_ref), num(s.gm), num(s.dc_gain_db), num(s.f_unity_hz)]);
    }
    Ok(Output { csv: csv("i_ref_a,gm_a_per_v,dc_gain_db,f_unity_hz", rows), summary, siblings: vec![] })
}

fn run_power(cfg: &ExperimentConfig, encoder: &EncoderConfig) -> Result<Output, Failure> {
    let p = &cfg.power;
    if p.i_ref_list_a.is_empty() || p.i_ref_list_a.iter().any(|i| !(*i > 0.0)) {
        return Err(Failure::Validation("power.i_ref_list_a needs positive currents".into()));
    }
    if p.f_spike_list_hz.is_empty() || p.f_spike_list_hz.iter().any(|f| !(*f >= 0.0)) {
        return Err(Failure::Validation("power.f_spike_list_hz needs non-negative rates".into()));
    }
    let model = cfg.power_model();
    let mut rows = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i_ref in &p.i_ref_list_a {
        let mut enc = *encoder;
        enc.transconductor.i_ref = i_ref;
        for &f in &p.f_spike_list_hz {
            let w = power_estimate(&enc, &model, f);
            lo = lo.min(w);
            hi = hi.max(w);
            rows.push(vec![num(i_ref), num(f), num(w)]);
        }
    }
    let summary = format!("power: {:.2} .. {:.2} nW\n", lo * 1e9, hi * 1e9);
    Ok(Output { csv: csv("i_ref_a,f_spike_hz,power_w", rows), summary, siblings: vec![] })
}

fn column(v: TuneVariable) -> String {
    let unit = if v == TuneVariable::TRf { "s" } else { "a" };
    format!("{}_{unit}", v.name())
}

fn run_tune(cfg: &ExperimentConfig, encoder: &EncoderConfig) -> Result<Output, Failure> {
    let spec = cfg.tune_spec()?;
    spec.solver.validate(&encoder.neuron).map_err(invalid)?;
    let result = tune(encoder, &spec).map_err(runtime)?;
    let header: Vec<String> = std::iter::once("evaluation".to_string())
        .chain(result.variables.iter().map(|&v| column(v)))
        .chain(std::iter::once("objective".to_string()))
        .collect();
    let rows = result.trace.iter().enumerate().map(|(k, e)| {
        std::iter::once(k.to_string()).chain(e.point.iter().map(|&x| num(x))).chain(std::iter::once(num(e.objective))).collect()
    });

    let mut summary = String::new();
    let _ = writeln!(summary, "objective: {}", spec.objective.name());
    let _ = writeln!(summary, "template objective: {}", num(result.trace[0].objective));
    let _ = writeln!(summary, "best objective: {}", num(result.best_objective));
    let _ = writeln!(
        summary,
        "evaluations: {}, restarts: {}, failed evaluations: {}",
        result.evaluations,
        result.restarts,
        result.failures.len()
    );
    for (v, x) in result.variables.iter().zip(&result.best_point) {
        let section = if *v == TuneVariable::IRef { "transconductor" } else { "neuron" };
        let _ = writeln!(summary, "--set {section}.{}={}", column(*v), num(*x));
    }
    Ok(Output { csv: csv(&header.join(","), rows), summary, siblings: vec![] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(overrides: &[&str]) -> ExperimentConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml_str("", &o).unwrap()
    }

    #[test]
    fn number_format_has_nine_significant_digits() {
        assert_eq!(num(1.0), "1.00000000e0");
        assert_eq!(num(-2.5e-12), "-2.50000000e-12");
    }

    #[test]
    fn csv_headers() {
        let small = ["dc_sweep.points=5", "transient.t_end_s=1e-4", "power.f_spike_list_hz=[1e3]", "tune.budget=13", "vf_curve.measure_time_s=2e-3"];
        let c = cfg(&small);
        let head = |cmd| execute(cmd, &c).unwrap().csv.lines().next().unwrap().to_string();
        assert_eq!(head(Command::DcSweep), "v_id_v,i_out_a");
        assert_eq!(head(Command::Transient), "t_s,v_id_v,i_in_a,i_mem_a");
        assert_eq!(head(Command::VfCurve), "v_in_v,rate_hz,in_window,flagged");
        assert_eq!(head(Command::Thd), "harmonic_index,amplitude_a");
        assert_eq!(head(Command::Freq), "i_ref_a,gm_a_per_v,dc_gain_db,f_unity_hz");
        assert_eq!(head(Command::Power), "i_ref_a,f_spike_hz,power_w");
        assert_eq!(head(Command::Tune), "evaluation,i_g_a,i_r_a,i_th_a,objective");
    }

    #[test]
    fn thd_rows_cover_fundamental_and_harmonics() {
        let out = execute(Command::Thd, &cfg(&[])).unwrap();
        assert_eq!(out.csv.lines().count(), 1 + 1 + crate::analysis::DEFAULT_HARMONICS);
        assert!(out.summary.contains("THD (linearized)"));
    }

    #[test]
    fn transient_writes_spike_sibling() {
        let out = execute(Command::Transient, &cfg(&["waveform.kind=\"dc\"", "waveform.offset_v=0.2", "transient.t_end_s=2e-3"])).unwrap();
        let (ext, spikes) = &out.siblings[0];
        assert_eq!(*ext, "spikes");
        assert!(spikes.lines().count() > 5);
        assert!(out.csv.ends_with('\n') && !out.csv.contains('\r'));
    }
}
