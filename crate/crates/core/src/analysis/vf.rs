//! Firing rate versus DC input and its straight-line linearity error.

use rayon::prelude::*;

use super::firing_rate;
use crate::device::SUPPLY_V;
use crate::error::{Error, Result};
use crate::sim::{transient, EncoderConfig, SolverConfig, Waveform};

/// In-window points with fewer spikes than this are flagged and left out of the fit.
pub const MIN_SPIKES_PER_POINT: usize = 5;
/// The window midpoint should collect at least this many spikes.
pub const MIN_MIDPOINT_SPIKES: usize = 20;

const WINDOW_EPS: f64 = 1e-12;

/// How the worst residual is scaled into a fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Fitted rate at the top of the window.
    #[default]
    WindowTop,
    /// Fitted rate span across the window.
    FullScaleSpan,
    /// Each residual relative to the fitted rate at that point.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VfPoint {
    pub v_in: f64,
    pub rate: f64,
    pub spikes: usize,
    pub in_window: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_deviation_fraction: f64,
}

impl LineFit {
    pub fn at(&self, v: f64) -> f64 {
        self.intercept + self.slope * v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VfCurve {
    pub points: Vec<VfPoint>,
    pub window: (f64, f64),
    pub normalization: Normalization,
    /// `None` when fewer than three usable in-window points exist.
    pub fit: Option<LineFit>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VfSettings {
    pub v_grid: Vec<f64>,
    pub settle_time: f64,
    pub measure_time: f64,
    pub window: (f64, f64),
    pub normalization: Normalization,
}

impl Default for VfSettings {
    fn default() -> Self {
        Self {
            v_grid: (0..=10).map(|k| 0.5 * k as f64 / 10.0).collect(),
            settle_time: 1e-3,
            measure_time: 20e-3,
            window: (0.1, 0.4),
            normalization: Normalization::WindowTop,
        }
    }
}

impl VfSettings {
    pub fn validate(&self) -> Result<()> {
        if self.v_grid.is_empty() || self.v_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("v_grid must be non-empty and strictly increasing".into()));
        }
        if self.v_grid.iter().any(|v| !(v.abs() <= SUPPLY_V)) {
            return Err(Error::Precondition("v_grid must stay within the supply".into()));
        }
        if !(self.settle_time >= 0.0 && self.measure_time > 0.0) {
            return Err(Error::Precondition("settle_time >= 0 and measure_time > 0 required".into()));
        }
        if !(self.window.0 < self.window.1) {
            return Err(Error::Precondition("window must satisfy lo < hi".into()));
        }
        Ok(())
    }
}

fn in_window(v: f64, window: (f64, f64)) -> bool {
    v >= window.0 - WINDOW_EPS && v <= window.1 + WINDOW_EPS
}

/// Least-squares line through `(x, y)`; `None` when `x` has no spread.
pub fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn fit_window(points: &[VfPoint], window: (f64, f64), normalization: Normalization) -> Result<LineFit> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| in_window(p.v_in, window) && !p.flagged)
        .map(|p| (p.v_in, p.rate))
        .collect();
    if used.len() < 3 {
        return Err(Error::Precondition(format!(
            "linearity fit needs >= 3 in-window points, have {}",
            used.len()
        )));
    }
    let (slope, intercept) =
        least_squares(&used).ok_or_else(|| Error::Precondition("degenerate fit: no spread in v_in".into()))?;
    let line = |v: f64| intercept + slope * v;
    let max_dev = match normalization {
        Normalization::WindowTop | Normalization::FullScaleSpan => {
            let scale = match normalization {
                Normalization::WindowTop => line(window.1),
                _ => line(window.1) - line(window.0),
            }
            .abs();
            let worst = used.iter().map(|&(v, r)| (r - line(v)).abs()).fold(0.0, f64::max);
            if worst == 0.0 {
                0.0
            } else {
                worst / scale
            }
        }
        Normalization::Pointwise => used
            .iter()
            .map(|&(v, r)| {
                let d = (r - line(v)).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / line(v).abs()
                }
            })
            .fold(0.0, f64::max),
    };
    Ok(LineFit { slope, intercept, max_deviation_fraction: max_dev })
}

impl VfCurve {
    /// Build a curve from measured points and fit it over `window`.
    pub fn from_points(mut points: Vec<VfPoint>, window: (f64, f64), normalization: Normalization) -> Self {
        points.sort_by(|a, b| a.v_in.total_cmp(&b.v_in));
        for p in &mut points {
            p.in_window = in_window(p.v_in, window);
        }
        let fit = fit_window(&points, window, normalization).ok();
        Self { points, window, normalization, fit, warnings: Vec::new() }
    }

    /// Curve from an arbitrary rate function with every point counted as well
    /// sampled; handy for imported or synthetic data.
    pub fn from_rates(
        samples: impl IntoIterator<Item = (f64, f64)>,
        window: (f64, f64),
        normalization: Normalization,
    ) -> Self {
        let points = samples
            .into_iter()
            .map(|(v_in, rate)| VfPoint { v_in, rate, spikes: usize::MAX, in_window: false, flagged: false })
            .collect();
        Self::from_points(points, window, normalization)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &VfPoint> {
        self.points.iter().filter(|p| p.flagged)
    }

    pub fn max_deviation_fraction(&self) -> Option<f64> {
        self.fit.map(|f| f.max_deviation_fraction)
    }
}

/// Recompute the straight-line deviation of `curve` over its window.
pub fn linearity_error(curve: &VfCurve) -> Result<f64> {
    fit_window(&curve.points, curve.window, curve.normalization).map(|f| f.max_deviation_fraction)
}

/// Measure the firing rate at every grid voltage with a DC input.
///
/// Points run in parallel and are merged by grid index.
pub fn vf_curve(encoder: &EncoderConfig, settings: &VfSettings, solver: &SolverConfig) -> Result<VfCurve> {
    settings.validate()?;
    encoder.validate()?;
    let t_end = settings.settle_time + settings.measure_time;
    let measured: Vec<(f64, usize)> = settings
        .v_grid
        .par_iter()
        .map(|&v| {
            let run = transient(encoder, &Waveform::dc(v), t_end, solver)
                .map_err(|e| Error::SweepPoint { v_id: v, source: Box::new(e) })?;
            let rate = firing_rate(&run.spikes, settings.settle_time, t_end);
            Ok((rate, run.spikes.count_in(settings.settle_time, t_end)))
        })
        .collect::<Result<_>>()?;

    let points = settings
        .v_grid
        .iter()
        .zip(&measured)
        .map(|(&v_in, &(rate, spikes))| {
            let inside = in_window(v_in, settings.window);
            VfPoint { v_in, rate, spikes, in_window: inside, flagged: inside && spikes < MIN_SPIKES_PER_POINT }
        })
        .collect();
    let mut curve = VfCurve::from_points(points, settings.window, settings.normalization);

    let mid = 0.5 * (settings.window.0 + settings.window.1);
    if let Some(p) = curve.points.iter().min_by(|a, b| (a.v_in - mid).abs().total_cmp(&(b.v_in - mid).abs())) {
        if p.spikes < MIN_MIDPOINT_SPIKES {
            curve.warnings.push(format!(
                "only {} spikes at v_in = {:.3} V; lengthen measure_time for >= {MIN_MIDPOINT_SPIKES}",
                p.spikes, p.v_in
            ));
        }
    }
    let flagged: Vec<String> =
        curve.flagged().map(|p| format!("v_in = {:.3} V flagged: {} spikes", p.v_in, p.spikes)).collect();
    curve.warnings.extend(flagged);
    Ok(curve)
}
