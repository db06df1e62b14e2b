//! Objective metrics and convergence diagnostics over a [`SimTrace`].

use serde::Serialize;
use thiserror::Error;

use crate::controller::ErrorNorms;
use crate::sim::SimTrace;
use crate::Scalar;

/// Samples at or below this value are excluded from log-linear fits.
pub const FIT_FLOOR: f64 = 1e-14;
/// Minimum number of usable samples for an envelope fit.
pub const MIN_FIT_SAMPLES: usize = 10;
/// Default decay band, relative to the peak of the upper envelope. Starting
/// at 1% skips the staircase produced by agents that have not yet heard from
/// the leader.
pub const BAND_UPPER: f64 = 1e-2;
pub const BAND_LOWER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("only {found} usable samples in the fit window (need {MIN_FIT_SAMPLES})")]
    TooFewSamples { found: usize },
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
}

/// Settling thresholds. `tracking = None` means 1% of the reference amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds<T> {
    pub tracking: Option<T>,
    pub soe_spread: T,
    pub soe_rate_spread: T,
}

impl<T: Scalar> Default for Thresholds<T> {
    fn default() -> Self {
        Self {
            tracking: None,
            soe_spread: T::lit(1e-3),
            soe_rate_spread: T::lit(1e-4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    /// Decay rate in 1/s; positive means decaying.
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Least-squares fit of `ln(series)` against time over `window`, skipping
/// samples at or below [`FIT_FLOOR`].
pub fn fit_envelope<T: Scalar>(times: &[T], series: &[T], window: (T, T)) -> Result<EnvelopeFit, AnalysisError> {
    if times.len() != series.len() {
        return Err(AnalysisError::LengthMismatch {
            times: times.len(),
            values: series.len(),
        });
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .filter(|(t, v)| **t >= window.0 && **t <= window.1 && v.as_f64() > FIT_FLOOR)
        .map(|(t, v)| (t.as_f64(), v.as_f64().ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(AnalysisError::TooFewSamples { found: pts.len() });
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = mean_y - slope * mean_t;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot > 1e-24 * n * mean_y.abs().max(1.0).powi(2) {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(EnvelopeFit {
        rate: -slope,
        prefactor: intercept.exp(),
        r_squared,
        window: (window.0.as_f64(), window.1.as_f64()),
        samples: pts.len(),
    })
}

/// Non-increasing upper envelope: `env[k] = max(series[k..])`.
pub fn upper_envelope<T: Scalar>(series: &[T]) -> Vec<T> {
    let mut out = series.to_vec();
    for k in (0..out.len().saturating_sub(1)).rev() {
        out[k] = out[k].max(out[k + 1]);
    }
    out
}

/// Decay band of a series: from the first time its upper envelope drops to
/// `upper` times its peak until it drops to `lower` times the peak (or to the
/// fit floor, or the end of the trace).
pub fn decay_window<T: Scalar>(times: &[T], series: &[T], upper: f64, lower: f64) -> Option<(T, T)> {
    let env = upper_envelope(series);
    let peak = env.first()?.as_f64();
    if !(peak > FIT_FLOOR) {
        return None;
    }
    let start = env.iter().position(|v| v.as_f64() <= upper * peak)?;
    let stop_level = (lower * peak).max(FIT_FLOOR);
    let end = env[start..]
        .iter()
        .position(|v| v.as_f64() <= stop_level)
        .map_or(env.len() - 1, |k| start + k);
    Some((times[start], times[end]))
}

/// Earliest time after which `series` never exceeds `threshold` again.
pub fn settled_after<T: Scalar>(times: &[T], series: &[T], threshold: T) -> Option<T> {
    match series.iter().rposition(|&v| v > threshold) {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

/// `max_i x_i - min_i x_i`.
pub fn spread<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let (lo, hi) = values
        .into_iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        hi - lo
    } else {
        T::zero()
    }
}

/// `max_{i,j} |x_i - x_j|` by enumerating pairs.
pub fn pairwise_spread<T: Scalar>(values: &[T]) -> T {
    let mut best = T::zero();
    for (i, &a) in values.iter().enumerate() {
        for &b in &values[i + 1..] {
            best = best.max((a - b).abs());
        }
    }
    best
}

/// Observer layer an error family belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Generator matrices, state and reference estimate.
    Reference,
    /// Common trajectory coefficients and state.
    Trajectory,
    /// Local SOE tracking.
    Tracking,
}

pub const FAMILY_LAYERS: [Layer; 8] = [
    Layer::Reference,
    Layer::Reference,
    Layer::Reference,
    Layer::Trajectory,
    Layer::Trajectory,
    Layer::Trajectory,
    Layer::Tracking,
    Layer::Reference,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport<T> {
    pub name: &'static str,
    pub layer: Layer,
    pub initial: T,
    pub peak: T,
    pub terminal: T,
    pub envelope: Option<EnvelopeFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_error: Option<String>,
    /// Max over agents at each sample.
    #[serde(skip)]
    pub series: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationSummary<T> {
    pub count: usize,
    pub per_agent: Vec<usize>,
    pub first_time: Option<T>,
    pub min_phi: Option<T>,
    pub max_phi: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary<T> {
    pub threshold: T,
    pub settled_after: Option<T>,
    pub max: T,
    pub terminal: T,
    #[serde(skip)]
    pub series: Vec<T>,
}

impl<T: Scalar> SeriesSummary<T> {
    fn new(times: &[T], series: Vec<T>, threshold: T) -> Self {
        Self {
            threshold,
            settled_after: settled_after(times, &series, threshold),
            max: series.iter().fold(T::zero(), |m, &v| m.max(v)),
            terminal: *series.last().expect("nonempty"),
            series,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport<T> {
    pub samples: usize,
    pub t_end: T,
    pub reference_amplitude: T,
    /// `|P_FESMS - P_REF|`.
    pub tracking_error: SeriesSummary<T>,
    /// `max_{i,j} |phi_i - phi_j|`.
    pub soe_spread: SeriesSummary<T>,
    /// `max_{i,j} |phi_i' - phi_j'|`.
    pub soe_rate_spread: SeriesSummary<T>,
    pub error_families: Vec<FamilyReport<T>>,
    pub peak_abs_p_out: Vec<T>,
    pub violations: ViolationSummary<T>,
    pub switch_count: usize,
    pub objectives: Objectives,
}

/// Whether each metric ends the trace settled below its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Objectives {
    pub tracking: bool,
    pub soe_balance: bool,
    pub soe_rate_balance: bool,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn family(&self, name: &str) -> Option<&FamilyReport<T>> {
        self.error_families.iter().find(|f| f.name == name)
    }
}

pub fn compute_metrics<T: Scalar>(
    trace: &SimTrace<T>,
    thresholds: &Thresholds<T>,
) -> Result<MetricsReport<T>, AnalysisError> {
    if trace.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let times = &trace.times;
    let n = trace.len();
    let amplitude = trace.p_ref.iter().fold(T::zero(), |m, v| m.max(v.abs()));

    let tracking: Vec<T> = trace
        .p_fesms
        .iter()
        .zip(&trace.p_ref)
        .map(|(&p, &r)| (p - r).abs())
        .collect();
    let soe: Vec<T> = (0..n).map(|k| spread(trace.agents.iter().map(|a| a.phi[k]))).collect();
    let soe_rate: Vec<T> = (0..n)
        .map(|k| spread(trace.agents.iter().map(|a| a.phi_dot[k])))
        .collect();

    let tracking_threshold = thresholds.tracking.unwrap_or(T::lit(0.01) * amplitude);

    let error_families = ErrorNorms::<T>::FAMILIES
        .iter()
        .enumerate()
        .map(|(f, &name)| {
            let series: Vec<T> = (0..n)
                .map(|k| {
                    trace
                        .agents
                        .iter()
                        .fold(T::zero(), |m, a| m.max(a.errors[k].as_array()[f]))
                })
                .collect();
            let env = upper_envelope(&series);
            let fit = decay_window(times, &series, BAND_UPPER, BAND_LOWER)
                .ok_or_else(|| "series never decays below 1% of its peak".to_string())
                .and_then(|w| fit_envelope(times, &env, w).map_err(|e| e.to_string()));
            FamilyReport {
                name,
                layer: FAMILY_LAYERS[f],
                initial: series[0],
                peak: env[0],
                terminal: series[n - 1],
                envelope: fit.as_ref().ok().copied(),
                envelope_error: fit.err(),
                series,
            }
        })
        .collect();

    let peak_abs_p_out = trace
        .agents
        .iter()
        .map(|a| a.p_out.iter().fold(T::zero(), |m, v| m.max(v.abs())))
        .collect();

    let mut per_agent = vec![0; trace.n_agents];
    for v in &trace.violations {
        per_agent[v.agent] += 1;
    }
    let violations = ViolationSummary {
        count: trace.violations.len(),
        per_agent,
        first_time: trace.violations.first().map(|v| v.time),
        min_phi: trace.violations.iter().map(|v| v.phi).reduce(T::min),
        max_phi: trace.violations.iter().map(|v| v.phi).reduce(T::max),
    };

    let tracking_error = SeriesSummary::new(times, tracking, tracking_threshold);
    let soe_spread = SeriesSummary::new(times, soe, thresholds.soe_spread);
    let soe_rate_spread = SeriesSummary::new(times, soe_rate, thresholds.soe_rate_spread);
    let objectives = Objectives {
        tracking: tracking_error.settled_after.is_some(),
        soe_balance: soe_spread.settled_after.is_some(),
        soe_rate_balance: soe_rate_spread.settled_after.is_some(),
    };
    Ok(MetricsReport {
        samples: n,
        t_end: times[n - 1],
        reference_amplitude: amplitude,
        tracking_error,
        soe_spread,
        soe_rate_spread,
        error_families,
        peak_abs_p_out,
        violations,
        switch_count: trace.switch_times.len(),
        objectives,
    })
}
