//! Integer microsecond time base shared by the engine, plants and channels.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest loop period the engine accepts, in microseconds.
pub const MIN_PERIOD_US: u64 = 1_000;

/// Largest duration accepted by [`ticks_from_seconds`], in seconds.
pub const MAX_SECONDS: f64 = 1.0e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeError {
    #[error("{0} s is below the 1 ms resolution floor")]
    BelowResolution(f64),
    #[error("{0} s exceeds the {MAX_SECONDS} s limit")]
    Overflow(f64),
    #[error("{0} is not a finite number of seconds")]
    NotFinite(f64),
}

/// Instant on the experiment clock, microseconds since start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TickTime(pub u64);

/// Non-negative span on the experiment clock, in microseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TickDuration(pub u64);

impl TickTime {
    pub const ZERO: TickTime = TickTime(0);

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Span since `earlier`, zero if `earlier` is later than `self`.
    pub fn saturating_since(self, earlier: TickTime) -> TickDuration {
        TickDuration(self.0.saturating_sub(earlier.0))
    }
}

impl TickDuration {
    pub const ZERO: TickDuration = TickDuration(0);

    pub const fn from_micros(us: u64) -> Self {
        TickDuration(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        TickDuration(ms * 1_000)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn to_std(self) -> std::time::Duration {
        std::time::Duration::from_micros(self.0)
    }
}

impl Add<TickDuration> for TickTime {
    type Output = TickTime;

    fn add(self, rhs: TickDuration) -> TickTime {
        TickTime(
            self.0
                .checked_add(rhs.0)
                .expect("tick arithmetic overflowed 64 bits"),
        )
    }
}

impl Sub<TickTime> for TickTime {
    type Output = TickDuration;

    fn sub(self, rhs: TickTime) -> TickDuration {
        TickDuration(
            self.0
                .checked_sub(rhs.0)
                .expect("tick subtraction went negative"),
        )
    }
}

impl fmt::Display for TickTime {
    /// Seconds with six decimals, e.g. `0.100000`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

impl fmt::Display for TickDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format_seconds(self.0))
    }
}

/// Shortest decimal seconds string that maps back to `micros` exactly.
pub fn format_seconds(micros: u64) -> String {
    let whole = micros / 1_000_000;
    let frac = micros % 1_000_000;
    if frac == 0 {
        return whole.to_string();
    }
    let digits = format!("{frac:06}");
    format!("{whole}.{}", digits.trim_end_matches('0'))
}

/// Converts decimal seconds to a duration rounded to the nearest microsecond.
pub fn ticks_from_seconds(s: f64) -> Result<TickDuration, TimeError> {
    if !s.is_finite() {
        return Err(TimeError::NotFinite(s));
    }
    if s < 0.001 {
        return Err(TimeError::BelowResolution(s));
    }
    if s > MAX_SECONDS {
        return Err(TimeError::Overflow(s));
    }
    Ok(TickDuration((s * 1e6).round() as u64))
}

/// Smallest `t >= now` lying on the grid `phase + k * period`.
///
/// Panics if `period` is zero, if `phase >= period`, or if the result would not fit in 64 bits.
pub fn next_sampling_instant(now: TickTime, period: TickDuration, phase: TickDuration) -> TickTime {
    assert!(period.0 > 0, "sampling period must be positive");
    assert!(phase.0 < period.0, "phase must be shorter than the period");
    if now.0 <= phase.0 {
        return TickTime(phase.0);
    }
    let since = now.0 - phase.0;
    let k = since.div_ceil(period.0);
    let t = k
        .checked_mul(period.0)
        .and_then(|v| v.checked_add(phase.0))
        .expect("next sampling instant overflows 64 bits");
    TickTime(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seconds_conversion_matches_published_periods() {
        assert_eq!(ticks_from_seconds(0.1).unwrap(), TickDuration(100_000));
        assert_eq!(ticks_from_seconds(0.5).unwrap(), TickDuration(500_000));
        assert_eq!(ticks_from_seconds(0.001).unwrap(), TickDuration(1_000));
        assert_eq!(ticks_from_seconds(1e6).unwrap(), TickDuration(1_000_000_000_000));
    }

    #[test]
    fn seconds_conversion_rejects_out_of_range() {
        assert!(matches!(
            ticks_from_seconds(0.0001),
            Err(TimeError::BelowResolution(_))
        ));
        assert!(matches!(
            ticks_from_seconds(1e6 + 1.0),
            Err(TimeError::Overflow(_))
        ));
        assert!(matches!(
            ticks_from_seconds(f64::NAN),
            Err(TimeError::NotFinite(_))
        ));
    }

    #[test]
    fn sampling_grid_examples() {
        let p = TickDuration(100_000);
        assert_eq!(next_sampling_instant(TickTime(0), p, TickDuration(0)), TickTime(0));
        assert_eq!(
            next_sampling_instant(TickTime(100_001), p, TickDuration(0)),
            TickTime(200_000)
        );
        assert_eq!(
            next_sampling_instant(TickTime(250_000), p, TickDuration(50_000)),
            TickTime(250_000)
        );
        assert_eq!(
            next_sampling_instant(TickTime(10), p, TickDuration(50_000)),
            TickTime(50_000)
        );
    }

    #[test]
    #[should_panic]
    fn phase_must_be_inside_period() {
        next_sampling_instant(TickTime(0), TickDuration(10), TickDuration(10));
    }

    #[test]
    fn display_formats() {
        assert_eq!(TickTime(100_000).to_string(), "0.100000");
        assert_eq!(TickTime(12_345_678).to_string(), "12.345678");
        assert_eq!(format_seconds(100_000), "0.1");
        assert_eq!(format_seconds(2_000_000), "2");
        assert_eq!(format_seconds(1_000_001), "1.000001");
    }

    proptest! {
        #[test]
        fn conversion_is_injective_on_micro_grid(a in 1_000u64..1_000_000_000_000, b in 1_000u64..1_000_000_000_000) {
            let sa = a as f64 / 1e6;
            let sb = b as f64 / 1e6;
            let ta = ticks_from_seconds(sa).unwrap();
            let tb = ticks_from_seconds(sb).unwrap();
            prop_assert_eq!(ta.0, a);
            prop_assert_eq!(ta == tb, a == b);
        }

        #[test]
        fn next_instant_is_smallest_grid_point(now in 0u64..10_000_000, period in 1u64..1_000_000, phase_frac in 0.0f64..1.0) {
            let phase = ((period as f64 * phase_frac) as u64).min(period - 1);
            let t = next_sampling_instant(TickTime(now), TickDuration(period), TickDuration(phase)).0;
            prop_assert!(t >= now);
            prop_assert_eq!((t - phase) % period, 0);
            // no grid point in [now, t)
            prop_assert!(t < period || t - period < now || t - period < phase);
        }

        #[test]
        fn format_seconds_roundtrips(us in 0u64..1_000_000_000_000) {
            let s: f64 = format_seconds(us).parse().unwrap();
            prop_assert_eq!((s * 1e6).round() as u64, us);
        }
    }
}
