//! Gait metrics: step-cycle segmentation from acceleration-magnitude peaks,
//! per-cycle joint range of motion, and descriptive (box-plot) statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imu::ImuSample;
use crate::kinematics::{Joint, JointAngleSeries, Side};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid peak params: {0}")]
    InvalidParams(String),
    #[error("signal too short: {len} samples, need at least {need}")]
    SignalTooShort { len: usize, need: usize },
    #[error("non-finite value in signal at index {0}")]
    NonFiniteSignal(usize),
    #[error("insufficient peaks: got {got}, need at least 2")]
    InsufficientPeaks { got: usize },
    #[error("peak indices must be strictly ascending")]
    PeaksNotAscending,
    #[error("cycle span {start}..{end} exceeds series length {len} for {side} {joint}")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
        side: &'static str,
        joint: &'static str,
    },
    #[error("no angle series supplied")]
    NoSeries,
    #[error("empty input")]
    EmptyInput,
    #[error("acceleration trace length {trace_len} does not cover cycle span ending at {end}")]
    TraceTooShort { trace_len: usize, end: usize },
}

/// Peak-detection parameters for step segmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakParams {
    /// Minimum spacing between step peaks, seconds.
    pub min_separation_s: f64,
    /// Minimum topographic prominence of a peak, m/s².
    pub min_prominence: f64,
    /// Centered moving-average window applied before detection, samples (odd).
    pub smoothing_window: usize,
}

impl Default for PeakParams {
    fn default() -> Self {
        PeakParams {
            min_separation_s: 0.7,
            min_prominence: 1.0,
            smoothing_window: 5,
        }
    }
}

impl PeakParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.min_separation_s.is_finite() && self.min_separation_s > 0.0) {
            return Err(MetricsError::InvalidParams(format!(
                "min_separation_s must be > 0, got {}",
                self.min_separation_s
            )));
        }
        if !(self.min_prominence.is_finite() && self.min_prominence >= 0.0) {
            return Err(MetricsError::InvalidParams(format!(
                "min_prominence must be >= 0, got {}",
                self.min_prominence
            )));
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(MetricsError::InvalidParams(format!(
                "smoothing_window must be odd, got {}",
                self.smoothing_window
            )));
        }
        Ok(())
    }
}

/// Euclidean norm of the accelerometer reading, m/s². Rotation-invariant.
pub fn accel_magnitude(sample: &ImuSample) -> f64 {
    sample.accel.norm()
}

/// Centered moving average; the window shrinks symmetrically-by-truncation at
/// the borders.
pub fn moving_average(signal: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = signal.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            signal[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Detects step peaks: local maxima of the smoothed signal that satisfy the
/// prominence and separation constraints, in ascending index order.
///
/// Plateau maxima resolve to their first index. An empty result is valid.
pub fn detect_steps(
    signal: &[f64],
    fs: f64,
    params: &PeakParams,
) -> Result<Vec<usize>, MetricsError> {
    params.validate()?;
    if let Some(idx) = signal.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteSignal(idx));
    }
    let need = (2.0 * fs * params.min_separation_s).ceil() as usize;
    if signal.len() < need {
        return Err(MetricsError::SignalTooShort {
            len: signal.len(),
            need,
        });
    }
    let smoothed = moving_average(signal, params.smoothing_window);

    // Local maxima, plateau-aware: first index of every run that rises into
    // and falls out of a constant level.
    let n = smoothed.len();
    let mut maxima: Vec<usize> = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if smoothed[i] > smoothed[i - 1] {
            let mut j = i;
            while j + 1 < n && smoothed[j + 1] == smoothed[i] {
                j += 1;
            }
            if j < n - 1 && smoothed[j + 1] < smoothed[i] {
                maxima.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    // Topographic prominence: height above the higher of the two valley
    // minima reached before a strictly taller sample (or the border).
    let prominent: Vec<usize> = maxima
        .into_iter()
        .filter(|&p| {
            let h = smoothed[p];
            let mut left_min = h;
            let mut k = p;
            while k > 0 {
                k -= 1;
                if smoothed[k] > h {
                    break;
                }
                left_min = left_min.min(smoothed[k]);
            }
            let mut right_min = h;
            let mut k = p;
            while k < n - 1 {
                k += 1;
                if smoothed[k] > h {
                    break;
                }
                right_min = right_min.min(smoothed[k]);
            }
            h - left_min.max(right_min) >= params.min_prominence
        })
        .collect();

    // Separation: greedily keep the tallest peaks (ties break toward the
    // earlier index) and drop any candidate closer than the minimum spacing.
    let min_dist = (params.min_separation_s * fs).ceil() as usize;
    let mut order: Vec<usize> = prominent.clone();
    order.sort_by(|&a, &b| {
        smoothed[b]
            .partial_cmp(&smoothed[a])
            .expect("finite")
            .then_with(|| a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for cand in order {
        if kept.iter().all(|&k| cand.abs_diff(k) >= min_dist) {
            kept.push(cand);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Inter-peak step cycle durations and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCycleTimes {
    pub times_s: Vec<f64>,
    pub mean_s: f64,
}

pub fn step_cycle_times(peaks: &[usize], fs: f64) -> Result<StepCycleTimes, MetricsError> {
    if peaks.len() < 2 {
        return Err(MetricsError::InsufficientPeaks { got: peaks.len() });
    }
    if peaks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MetricsError::PeaksNotAscending);
    }
    let times_s: Vec<f64> = peaks
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / fs)
        .collect();
    let mean_s = times_s.iter().sum::<f64>() / times_s.len() as f64;
    Ok(StepCycleTimes { times_s, mean_s })
}

/// One segmented stride: inclusive sample span, duration, and per-joint range
/// of motion (max − min of the primary angle over the span), degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycle {
    pub start_index: usize,
    pub end_index: usize,
    pub duration_s: f64,
    pub joint_ranges_deg: BTreeMap<(Side, Joint), f64>,
}

/// Cuts the angle series into one cycle per consecutive peak pair.
pub fn segment_cycles(
    peaks: &[usize],
    series: &[JointAngleSeries],
) -> Result<Vec<GaitCycle>, MetricsError> {
    if peaks.len() < 2 {
        return Err(MetricsError::InsufficientPeaks { got: peaks.len() });
    }
    if peaks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MetricsError::PeaksNotAscending);
    }
    if series.is_empty() {
        return Err(MetricsError::NoSeries);
    }
    let mut cycles = Vec::with_capacity(peaks.len() - 1);
    for w in peaks.windows(2) {
        let (start, end) = (w[0], w[1]);
        let mut ranges = BTreeMap::new();
        for s in series {
            if end >= s.primary_deg.len() {
                return Err(MetricsError::SpanOutOfBounds {
                    start,
                    end,
                    len: s.primary_deg.len(),
                    side: s.side.as_str(),
                    joint: s.joint.as_str(),
                });
            }
            let span = &s.primary_deg[start..=end];
            let max = span.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = span.iter().copied().fold(f64::INFINITY, f64::min);
            ranges.insert((s.side, s.joint), max - min);
        }
        let duration_s = series[0].timestamps[end] - series[0].timestamps[start];
        cycles.push(GaitCycle {
            start_index: start,
            end_index: end,
            duration_s,
            joint_ranges_deg: ranges,
        });
    }
    Ok(cycles)
}

/// Resamples one cycle of a series to 101 points (0–100% of the gait cycle)
/// by linear interpolation.
pub fn normalize_cycle(primary_deg: &[f64], start: usize, end: usize) -> Vec<f64> {
    debug_assert!(end > start && end < primary_deg.len());
    let span = (end - start) as f64;
    (0..=100)
        .map(|i| {
            let pos = start as f64 + span * (i as f64 / 100.0);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(end);
            let frac = pos - lo as f64;
            primary_deg[lo] * (1.0 - frac) + primary_deg[hi] * frac
        })
        .collect()
}

/// Tukey box-plot statistics: quartiles by linear interpolation (the common
/// `(n-1)p` convention), whiskers at the furthest datum within 1.5·IQR of the
/// quartiles, everything beyond flagged as an outlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub n: usize,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteSignal(idx));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let outliers: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| *v < lo_fence || *v > hi_fence)
        .collect();
    let inliers: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| *v >= lo_fence && *v <= hi_fence)
        .collect();
    // At least the quartiles themselves always sit inside the fences.
    let whisker_low = inliers.first().copied().unwrap_or(q1);
    let whisker_high = inliers.last().copied().unwrap_or(q3);
    Ok(BoxStats {
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
        n: values.len(),
    })
}

/// Acceleration-magnitude traces on the filter output grid. `magnitude` is
/// the raw Euclidean norm (gravity included); `dynamic_magnitude` is the norm
/// of the globally-rotated acceleration with gravity subtracted. The two are
/// reported side by side and labeled, since the choice materially changes the
/// numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccelTrace {
    pub magnitude: Vec<f64>,
    pub dynamic_magnitude: Vec<f64>,
}

/// Session-level summary over the walking span (first to last detected peak).
#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetrics {
    pub mean_step_cycle_time_s: f64,
    pub mean_accel_magnitude_mps2: f64,
    /// Population variance of the per-sample magnitude over the walking span.
    pub accel_variance_mps2sq: f64,
    pub mean_dynamic_accel_mps2: f64,
    pub dynamic_accel_variance_mps2sq: f64,
    pub joint_range_stats: BTreeMap<(Side, Joint), BoxStats>,
    pub n_cycles: usize,
}

fn mean_and_population_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Aggregates cycles and the acceleration trace into session metrics.
pub fn session_metrics(
    cycles: &[GaitCycle],
    trace: &AccelTrace,
) -> Result<SessionMetrics, MetricsError> {
    if cycles.is_empty() {
        return Err(MetricsError::InsufficientPeaks { got: cycles.len() });
    }
    let start = cycles.first().expect("non-empty").start_index;
    let end = cycles.last().expect("non-empty").end_index;
    if end >= trace.magnitude.len() || end >= trace.dynamic_magnitude.len() {
        return Err(MetricsError::TraceTooShort {
            trace_len: trace.magnitude.len().min(trace.dynamic_magnitude.len()),
            end,
        });
    }
    let mean_step_cycle_time_s =
        cycles.iter().map(|c| c.duration_s).sum::<f64>() / cycles.len() as f64;
    let (mean_mag, var_mag) = mean_and_population_variance(&trace.magnitude[start..=end]);
    let (mean_dyn, var_dyn) = mean_and_population_variance(&trace.dynamic_magnitude[start..=end]);

    let mut pooled: BTreeMap<(Side, Joint), Vec<f64>> = BTreeMap::new();
    for cycle in cycles {
        for (&key, &range) in &cycle.joint_ranges_deg {
            pooled.entry(key).or_default().push(range);
        }
    }
    let mut joint_range_stats = BTreeMap::new();
    for (key, ranges) in pooled {
        joint_range_stats.insert(key, box_stats(&ranges)?);
    }

    Ok(SessionMetrics {
        mean_step_cycle_time_s,
        mean_accel_magnitude_mps2: mean_mag,
        accel_variance_mps2sq: var_mag,
        mean_dynamic_accel_mps2: mean_dyn,
        dynamic_accel_variance_mps2sq: var_dyn,
        joint_range_stats,
        n_cycles: cycles.len(),
    })
}
