//! Step-response figures of merit for one loop's trace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Seconds; `None` when the trace ends outside the band.
    pub settling_time: Option<f64>,
    pub overshoot_pct: f64,
    pub steady_state_error: f64,
    /// Integral of `|setpoint - y|` by the trapezoid rule, in level-seconds.
    pub iae: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("records are not in time order")]
    Unordered,
}

/// `records` must belong to one loop. Settling is measured from `t = 0`.
///
/// Overshoot is measured in the direction of the setpoint, so a negative
/// setpoint overshoots when `y` goes below it.
pub fn compute_metrics(
    records: &[TraceRecord],
    setpoint: f64,
    band_pct: f64,
    tail_pct: f64,
) -> Result<Metrics, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    if records.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(MetricsError::Unordered);
    }
    let band = band_pct / 100.0 * setpoint.abs();
    let settling_time = match records.iter().rposition(|r| (r.y - setpoint).abs() > band) {
        None => Some(records[0].t.as_secs_f64()),
        Some(i) if i + 1 == records.len() => None,
        Some(i) => Some(records[i + 1].t.as_secs_f64()),
    };

    let overshoot_pct = if setpoint == 0.0 {
        0.0
    } else if setpoint > 0.0 {
        let peak = records.iter().map(|r| r.y).fold(f64::NEG_INFINITY, f64::max);
        ((peak - setpoint) / setpoint * 100.0).max(0.0)
    } else {
        let trough = records.iter().map(|r| r.y).fold(f64::INFINITY, f64::min);
        ((setpoint - trough) / -setpoint * 100.0).max(0.0)
    };

    let n = records.len();
    let tail = ((n as f64 * tail_pct / 100.0).ceil() as usize).clamp(1, n);
    let mean = records[n - tail..].iter().map(|r| r.y).sum::<f64>() / tail as f64;
    let steady_state_error = (mean - setpoint).abs();

    let iae = records
        .windows(2)
        .map(|w| {
            let dt = (w[1].t.micros() - w[0].t.micros()) as f64 * 1e-6;
            dt * ((setpoint - w[0].y).abs() + (setpoint - w[1].y).abs()) / 2.0
        })
        .sum();

    Ok(Metrics {
        settling_time,
        overshoot_pct,
        steady_state_error,
        iae,
    })
}

/// True when any output is non-finite or exceeds `limit` in magnitude.
pub fn diverged(records: &[TraceRecord], limit: f64) -> bool {
    records.iter().any(|r| !r.y.is_finite() || r.y.abs() > limit)
}
