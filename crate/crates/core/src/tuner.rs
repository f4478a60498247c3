//! Bias tuning by bounded Nelder-Mead over the neuron and transconductor
//! currents.
//!
//! The search runs in a normalized unit box. Points leaving the box are
//! clamped back onto it, so every evaluated configuration respects the
//! declared bounds. A failed evaluation scores `+inf` and is logged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::vf::least_squares;
use crate::analysis::{linearity_error, power_estimate, vf_curve, PowerModel, VfCurve, VfSettings};
use crate::error::{Error, Result};
use crate::sim::{EncoderConfig, SolverConfig};

/// Added to the objective for every in-window point that barely fires.
pub const FLAGGED_POINT_PENALTY: f64 = 1.0;
/// Deviation allowed inside a run counted by the linear-range objective.
pub const LINEAR_RANGE_TOLERANCE: f64 = 0.056;
/// Power scale of the power-weighted objective (W).
pub const POWER_SCALE_W: f64 = 100e-9;

const COLLAPSE_DIAMETER: f64 = 1e-6;
const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TuneVariable {
    IRef,
    IG,
    IR,
    ITh,
    TRf,
}

impl TuneVariable {
    pub const ALL: [TuneVariable; 5] = [Self::IRef, Self::IG, Self::IR, Self::ITh, Self::TRf];

    pub fn name(self) -> &'static str {
        match self {
            Self::IRef => "i_ref",
            Self::IG => "i_g",
            Self::IR => "i_r",
            Self::ITh => "i_th",
            Self::TRf => "t_rf",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    fn is_current(self) -> bool {
        !matches!(self, Self::TRf)
    }

    pub fn get(self, enc: &EncoderConfig) -> f64 {
        match self {
            Self::IRef => enc.transconductor.i_ref,
            Self::IG => enc.neuron.i_g,
            Self::IR => enc.neuron.i_r,
            Self::ITh => enc.neuron.i_th,
            Self::TRf => enc.neuron.t_rf,
        }
    }

    /// Setting `i_g` keeps the template's `i_reset / i_g` ratio.
    pub fn set(self, enc: &mut EncoderConfig, value: f64) {
        match self {
            Self::IRef => enc.transconductor.i_ref = value,
            Self::IG => {
                let ratio = enc.neuron.i_reset / enc.neuron.i_g;
                enc.neuron.i_g = value;
                enc.neuron.i_reset = ratio * value;
            }
            Self::IR => enc.neuron.i_r = value,
            Self::ITh => enc.neuron.i_th = value,
            Self::TRf => enc.neuron.t_rf = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableBound {
    pub variable: TuneVariable,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveKind {
    #[default]
    Linearity,
    NegativeLinearRange,
    PowerWeighted,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linearity => "linearity_error",
            Self::NegativeLinearRange => "negative_linear_range",
            Self::PowerWeighted => "power_weighted",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::Linearity, Self::NegativeLinearRange, Self::PowerWeighted].into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSpec {
    pub variables: Vec<VariableBound>,
    pub objective: ObjectiveKind,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Search current variables on a logarithmic scale, i.e. linearly in the
    /// bias voltage that would produce them.
    pub voltage_domain: bool,
    pub vf: VfSettings,
    pub solver: SolverConfig,
    pub power_model: PowerModel,
    pub power_weight: f64,
}

impl Default for TuneSpec {
    fn default() -> Self {
        Self {
            variables: vec![
                VariableBound { variable: TuneVariable::IG, lo: 0.5e-12, hi: 10e-12 },
                VariableBound { variable: TuneVariable::IR, lo: 100e-12, hi: 1e-9 },
                VariableBound { variable: TuneVariable::ITh, lo: 5e-12, hi: 80e-12 },
            ],
            objective: ObjectiveKind::Linearity,
            budget: 300,
            seed: 1,
            voltage_domain: false,
            vf: VfSettings::default(),
            solver: SolverConfig::default(),
            power_model: PowerModel::default(),
            power_weight: 0.01,
        }
    }
}

impl TuneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::Precondition("tune spec needs at least one variable".into()));
        }
        for (i, b) in self.variables.iter().enumerate() {
            let name = b.variable.name();
            if self.variables[..i].iter().any(|o| o.variable == b.variable) {
                return Err(Error::Precondition(format!("variable {name} listed twice")));
            }
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                return Err(Error::Precondition(format!("bounds of {name} must be finite and ordered")));
            }
            if b.lo < 0.0 || (b.variable.is_current() && b.lo <= 0.0) {
                return Err(Error::Precondition(format!("bounds of {name} must be positive")));
            }
        }
        let d = self.variables.len();
        if self.budget < d * (d + 1) + 1 {
            return Err(Error::Precondition(format!(
                "budget {} below the minimum {} for {d} variables",
                self.budget,
                d * (d + 1) + 1
            )));
        }
        self.vf.validate()
    }

    fn log_scale(&self, b: &VariableBound) -> bool {
        self.voltage_domain && b.variable.is_current()
    }

    fn to_value(&self, b: &VariableBound, u: f64) -> f64 {
        if b.lo == b.hi {
            b.lo
        } else if self.log_scale(b) {
            (b.lo.ln() + u * (b.hi / b.lo).ln()).exp().clamp(b.lo, b.hi)
        } else {
            (b.lo + u * (b.hi - b.lo)).clamp(b.lo, b.hi)
        }
    }

    fn to_unit(&self, b: &VariableBound, x: f64) -> f64 {
        let x = x.clamp(b.lo, b.hi);
        if b.lo == b.hi {
            0.0
        } else if self.log_scale(b) {
            (x / b.lo).ln() / (b.hi / b.lo).ln()
        } else {
            (x - b.lo) / (b.hi - b.lo)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneEvaluation {
    /// Values in the order of `TuneSpec::variables`.
    pub point: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub variables: Vec<TuneVariable>,
    pub best_point: Vec<f64>,
    pub best_objective: f64,
    pub evaluations: usize,
    pub trace: Vec<TuneEvaluation>,
    pub failures: Vec<String>,
    pub restarts: usize,
}

impl TuneResult {
    pub fn apply_to(&self, template: &EncoderConfig) -> EncoderConfig {
        let mut enc = *template;
        for (v, &x) in self.variables.iter().zip(&self.best_point) {
            v.set(&mut enc, x);
        }
        enc
    }

    /// Running minimum of the trace objectives.
    pub fn running_best(&self) -> Vec<f64> {
        self.trace
            .iter()
            .scan(f64::INFINITY, |best, e| {
                *best = best.min(e.objective);
                Some(*best)
            })
            .collect()
    }
}

/// Max straight-line deviation of the curve plus a fixed penalty per flagged
/// in-window point. Equals [`linearity_error`] when nothing is flagged.
pub fn objective_from_curve(curve: &VfCurve) -> Result<f64> {
    let flagged = curve.points.iter().filter(|p| p.in_window && p.flagged).count();
    let usable = curve.points.iter().filter(|p| p.in_window && !p.flagged).count();
    let deviation = if flagged > 0 && usable < 3 { 0.0 } else { linearity_error(curve)? };
    Ok(deviation + FLAGGED_POINT_PENALTY * flagged as f64)
}

pub fn objective_linearity(encoder: &EncoderConfig, vf: &VfSettings, solver: &SolverConfig) -> Result<f64> {
    objective_from_curve(&vf_curve(encoder, vf, solver)?)
}

/// Minus the widest input span over which a straight line fits the measured
/// rates to within [`LINEAR_RANGE_TOLERANCE`] of the fitted top.
pub fn negative_linear_range(curve: &VfCurve) -> f64 {
    let pts: Vec<(f64, f64)> = curve.points.iter().filter(|p| !p.flagged && p.rate > 0.0).map(|p| (p.v_in, p.rate)).collect();
    let mut widest = 0.0_f64;
    for i in 0..pts.len() {
        for j in (i + 2)..pts.len() {
            let span = pts[j].0 - pts[i].0;
            if span <= widest {
                continue;
            }
            let run = &pts[i..=j];
            let Some((slope, intercept)) = least_squares(run) else { continue };
            let top = (intercept + slope * pts[j].0).abs();
            let worst = run.iter().map(|&(v, r)| (r - intercept - slope * v).abs()).fold(0.0, f64::max);
            if top > 0.0 && worst <= LINEAR_RANGE_TOLERANCE * top {
                widest = span;
            }
        }
    }
    -widest
}

fn builtin_objective(encoder: &EncoderConfig, spec: &TuneSpec) -> Result<f64> {
    let curve = vf_curve(encoder, &spec.vf, &spec.solver)?;
    match spec.objective {
        ObjectiveKind::Linearity => objective_from_curve(&curve),
        ObjectiveKind::NegativeLinearRange => Ok(negative_linear_range(&curve)),
        ObjectiveKind::PowerWeighted => {
            let inside: Vec<f64> = curve.points.iter().filter(|p| p.in_window).map(|p| p.rate).collect();
            let mean_rate = inside.iter().sum::<f64>() / inside.len().max(1) as f64;
            let power = power_estimate(encoder, &spec.power_model, mean_rate);
            Ok(objective_from_curve(&curve)? + spec.power_weight * power / POWER_SCALE_W)
        }
    }
}

/// Tune `template` against the objective named in `spec`.
pub fn tune(template: &EncoderConfig, spec: &TuneSpec) -> Result<TuneResult> {
    tune_with(template, spec, |enc| builtin_objective(enc, spec))
}

/// Tune against an arbitrary objective of the candidate encoder.
pub fn tune_with<F>(template: &EncoderConfig, spec: &TuneSpec, mut objective: F) -> Result<TuneResult>
where
    F: FnMut(&EncoderConfig) -> Result<f64>,
{
    spec.validate()?;
    let free: Vec<usize> = (0..spec.variables.len()).filter(|&i| spec.variables[i].lo < spec.variables[i].hi).collect();
    let mut search = Search {
        spec,
        template,
        free: &free,
        objective: &mut objective,
        trace: Vec::new(),
        failures: Vec::new(),
    };

    let start: Vec<f64> = free
        .iter()
        .map(|&i| {
            let b = &spec.variables[i];
            spec.to_unit(b, b.variable.get(template))
        })
        .collect();
    let f_start = search.evaluate(&start);
    let mut restarts = 0;
    if !free.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut centre = (start, f_start);
        loop {
            let collapsed = search.nelder_mead(centre.clone(), &mut rng);
            if !collapsed || restarts == 1 || search.exhausted() {
                break;
            }
            restarts += 1;
            centre = search.best_unit();
        }
    }

    let Search { trace, failures, .. } = search;
    let best = trace
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
        .map(|(_, e)| e.clone())
        .expect("at least one evaluation");
    if !best.objective.is_finite() {
        return Err(Error::TunerFailed {
            evaluations: trace.len(),
            first: failures.first().cloned().unwrap_or_else(|| "objective was not finite".into()),
        });
    }
    Ok(TuneResult {
        variables: spec.variables.iter().map(|b| b.variable).collect(),
        best_point: best.point,
        best_objective: best.objective,
        evaluations: trace.len(),
        trace,
        failures,
        restarts,
    })
}

struct Search<'a, F> {
    spec: &'a TuneSpec,
    template: &'a EncoderConfig,
    free: &'a [usize],
    objective: &'a mut F,
    trace: Vec<TuneEvaluation>,
    failures: Vec<String>,
}

impl<F> Search<'_, F>
where
    F: FnMut(&EncoderConfig) -> Result<f64>,
{
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.spec.budget
    }

    fn point_of(&self, unit: &[f64]) -> Vec<f64> {
        let mut point: Vec<f64> = self.spec.variables.iter().map(|b| self.spec.to_value(b, 0.0)).collect();
        for (&i, &u) in self.free.iter().zip(unit) {
            point[i] = self.spec.to_value(&self.spec.variables[i], u);
        }
        point
    }

    fn evaluate(&mut self, unit: &[f64]) -> f64 {
        let point = self.point_of(unit);
        let mut enc = *self.template;
        for (b, &x) in self.spec.variables.iter().zip(&point) {
            b.variable.set(&mut enc, x);
        }
        let value = match (self.objective)(&enc) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                self.failures.push(format!("{}: objective {v}", describe(self.spec, &point)));
                f64::INFINITY
            }
            Err(e) => {
                self.failures.push(format!("{}: {e}", describe(self.spec, &point)));
                f64::INFINITY
            }
        };
        self.trace.push(TuneEvaluation { point, objective: value });
        value
    }

    fn best_unit(&self) -> (Vec<f64>, f64) {
        let best = self
            .trace
            .iter()
            .min_by(|a, b| a.objective.total_cmp(&b.objective))
            .expect("trace is never empty here");
        let unit = self.free.iter().map(|&i| self.spec.to_unit(&self.spec.variables[i], best.point[i])).collect();
        (unit, best.objective)
    }

    /// Runs until the budget is spent or the simplex collapses; returns
    /// whether it collapsed.
    fn nelder_mead(&mut self, (x0, f0): (Vec<f64>, f64), rng: &mut ChaCha8Rng) -> bool {
        let d = x0.len();
        let mut simplex = vec![(x0.clone(), f0)];
        for i in 0..d {
            if self.exhausted() {
                return false;
            }
            let mut x = x0.clone();
            let step = rng.random_range(0.15..0.35);
            x[i] = if x[i] + step <= 1.0 { x[i] + step } else { x[i] - step };
            let f = self.evaluate(&x);
            simplex.push((x, f));
        }

        let clamp = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|u| u.clamp(0.0, 1.0)).collect() };
        let affine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };

        while !self.exhausted() {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let diameter = simplex
                .iter()
                .skip(1)
                .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diameter < COLLAPSE_DIAMETER {
                return true;
            }
            let centroid: Vec<f64> =
                (0..d).map(|k| simplex[..d].iter().map(|(x, _)| x[k]).sum::<f64>() / d as f64).collect();
            let (worst, f_worst) = simplex[d].clone();
            let f_best = simplex[0].1;
            let f_second = simplex[d - 1].1;

            let xr = clamp(affine(&centroid, &worst, -REFLECT));
            let fr = self.evaluate(&xr);
            if fr < f_best {
                if self.exhausted() {
                    simplex[d] = (xr, fr);
                    break;
                }
                let xe = clamp(affine(&centroid, &worst, -EXPAND));
                let fe = self.evaluate(&xe);
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < f_second {
                simplex[d] = (xr, fr);
            } else {
                if self.exhausted() {
                    break;
                }
                let (xc, fc) = if fr < f_worst {
                    let xc = clamp(affine(&centroid, &xr, CONTRACT));
                    let fc = self.evaluate(&xc);
                    (xc, fc)
                } else {
                    let xc = clamp(affine(&centroid, &worst, CONTRACT));
                    let fc = self.evaluate(&xc);
                    (xc, fc)
                };
                if fc < f_worst.min(fr) {
                    simplex[d] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        if self.exhausted() {
                            break;
                        }
                        let x = affine(&best, &vertex.0, SHRINK);
                        let f = self.evaluate(&x);
                        *vertex = (x, f);
                    }
                }
            }
        }
        false
    }
}

fn describe(spec: &TuneSpec, point: &[f64]) -> String {
    spec.variables
        .iter()
        .zip(point)
        .map(|(b, x)| format!("{}={x:.4e}", b.variable.name()))
        .collect::<Vec<_>>()
        .join(" ")
}
