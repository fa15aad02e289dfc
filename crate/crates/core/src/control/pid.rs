//! Positional discrete PID with conditional-integration anti-windup.
//!
//! The integral term is accumulated by backward Euler (`I += ki * h * e`, the
//! current error included). The derivative acts on the error and may be
//! low-pass filtered with coefficient `n`; it is zero on the first call.

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::time::TickDuration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Derivative filter coefficient; 0 disables filtering.
    #[serde(default, rename = "n")]
    pub derivative_filter_n: f64,
}

impl PidGains {
    /// Gains without output limits, for tests and unconstrained loops.
    pub fn unbounded(kp: f64, ki: f64, kd: f64) -> Self {
        PidGains {
            kp,
            ki,
            kd,
            u_min: f64::MIN,
            u_max: f64::MAX,
            derivative_filter_n: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let fields = [
            ("kp", self.kp),
            ("ki", self.ki),
            ("kd", self.kd),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
            ("n", self.derivative_filter_n),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ControlError::InvalidGains(format!("{name} is not finite")));
            }
        }
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if v < 0.0 {
                return Err(ControlError::InvalidGains(format!("{name} must be >= 0")));
            }
        }
        if self.derivative_filter_n < 0.0 {
            return Err(ControlError::InvalidGains("n must be >= 0".into()));
        }
        if self.u_min >= self.u_max {
            return Err(ControlError::InvalidGains("u_min must be < u_max".into()));
        }
        Ok(())
    }
}

impl Default for PidGains {
    /// Water-tank defaults.
    fn default() -> Self {
        PidGains {
            kp: 2.0,
            ki: 0.4,
            kd: 0.0,
            u_min: 0.0,
            u_max: 4.0,
            derivative_filter_n: 0.0,
        }
    }
}

/// Controller memory carried between activations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    /// Accumulated `ki`-weighted integral term.
    pub integral: f64,
    pub prev_error: f64,
    pub prev_derivative: f64,
    pub initialized: bool,
}

impl PidState {
    pub fn fresh() -> Self {
        PidState::default()
    }
}

/// Which branch a step took; used by coverage-style tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepFlags {
    pub saturated: bool,
    pub integration_held: bool,
}

/// One controller activation. Pure: the new state is returned, not written.
pub fn pid_step(
    gains: &PidGains,
    state: &PidState,
    r: f64,
    y: f64,
    h: TickDuration,
) -> Result<(f64, PidState), ControlError> {
    pid_step_traced(gains, state, r, y, h).map(|(u, s, _)| (u, s))
}

/// [`pid_step`] that also reports saturation and held integration.
pub fn pid_step_traced(
    gains: &PidGains,
    state: &PidState,
    r: f64,
    y: f64,
    h: TickDuration,
) -> Result<(f64, PidState, StepFlags), ControlError> {
    if !r.is_finite() || !y.is_finite() {
        return Err(ControlError::NonFiniteInput { r, y });
    }
    assert!(h.micros() > 0, "controller period must be positive");
    let hs = h.as_secs_f64();
    let e = r - y;

    let integral_next = state.integral + gains.ki * hs * e;

    let derivative = if !state.initialized {
        0.0
    } else if gains.derivative_filter_n > 0.0 {
        let nh = gains.derivative_filter_n * hs;
        (state.prev_derivative + gains.kd * gains.derivative_filter_n * (e - state.prev_error))
            / (1.0 + nh)
    } else {
        gains.kd * (e - state.prev_error) / hs
    };

    let candidate = gains.kp * e + integral_next + derivative;
    let u = candidate.clamp(gains.u_min, gains.u_max);

    let mut flags = StepFlags::default();
    let mut integral = integral_next;
    if candidate > gains.u_max || candidate < gains.u_min {
        flags.saturated = true;
        let deeper = (candidate > gains.u_max && e > 0.0) || (candidate < gains.u_min && e < 0.0);
        if deeper {
            integral = state.integral;
            flags.integration_held = true;
        }
    }

    let next = PidState {
        integral,
        prev_error: e,
        prev_derivative: derivative,
        initialized: true,
    };
    Ok((u, next, flags))
}

/// Returns the fresh state.
pub fn pid_reset(_state: &PidState) -> PidState {
    PidState::fresh()
}

/// Stateful wrapper used by the engine.
#[derive(Debug, Clone)]
pub struct PidController {
    gains: PidGains,
    state: PidState,
}

impl PidController {
    pub fn new(gains: PidGains) -> Result<Self, ControlError> {
        gains.validate()?;
        Ok(PidController {
            gains,
            state: PidState::fresh(),
        })
    }

    pub fn state(&self) -> &PidState {
        &self.state
    }
}

impl super::Controller for PidController {
    fn step(&mut self, r: f64, y: f64, h: TickDuration) -> Result<f64, ControlError> {
        let (u, next) = pid_step(&self.gains, &self.state, r, y, h)?;
        self.state = next;
        Ok(u)
    }

    fn reset(&mut self) {
        self.state = pid_reset(&self.state);
    }

    fn gains(&self) -> Option<PidGains> {
        Some(self.gains)
    }

    fn set_gains(&mut self, gains: PidGains) -> Result<(), ControlError> {
        gains.validate()?;
        self.gains = gains;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: TickDuration = TickDuration::from_millis(100);

    #[test]
    fn pure_proportional() {
        let g = PidGains::unbounded(2.0, 0.0, 0.0);
        let (u, _) = pid_step(&g, &PidState::fresh(), 5.0, 2.0, H).unwrap();
        assert_eq!(u, 6.0);
    }

    #[test]
    fn rectangular_integration_includes_current_error() {
        let g = PidGains::unbounded(0.0, 1.0, 0.0);
        let mut s = PidState::fresh();
        let mut outs = Vec::new();
        for _ in 0..3 {
            let (u, n) = pid_step(&g, &s, 1.0, 0.0, H).unwrap();
            s = n;
            outs.push(u);
        }
        for (got, want) in outs.iter().zip([0.1, 0.2, 0.3]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn saturation_holds_integral() {
        let g = PidGains {
            kp: 10.0,
            ki: 1.0,
            kd: 0.0,
            u_min: -1.0,
            u_max: 1.0,
            derivative_filter_n: 0.0,
        };
        let s0 = PidState::fresh();
        let (u1, s1, f1) = pid_step_traced(&g, &s0, 100.0, 0.0, H).unwrap();
        assert_eq!(u1, 1.0);
        assert_eq!(s1.integral, 0.0);
        assert!(f1.saturated && f1.integration_held);
        let (u2, s2) = pid_step(&g, &s1, 100.0, 0.0, H).unwrap();
        assert_eq!(u2, 1.0);
        assert_eq!(s2.integral, 0.0);
    }

    #[test]
    fn saturation_against_error_keeps_integrating() {
        // large positive integral, error now negative: integrating pulls out of saturation
        let g = PidGains {
            kp: 0.0,
            ki: 1.0,
            kd: 0.0,
            u_min: 0.0,
            u_max: 1.0,
            derivative_filter_n: 0.0,
        };
        let s = PidState {
            integral: 5.0,
            ..PidState::fresh()
        };
        let (u, next, flags) = pid_step_traced(&g, &s, 0.0, 1.0, H).unwrap();
        assert_eq!(u, 1.0);
        assert!(flags.saturated && !flags.integration_held);
        assert!((next.integral - 4.9).abs() < 1e-12);
    }

    #[test]
    fn first_step_has_no_derivative_kick() {
        let g = PidGains::unbounded(0.0, 0.0, 3.0);
        let (u, s) = pid_step(&g, &PidState::fresh(), 10.0, 0.0, H).unwrap();
        assert_eq!(u, 0.0);
        let (u2, _) = pid_step(&g, &s, 10.0, 1.0, H).unwrap();
        // e went 10 -> 9
        assert!((u2 - 3.0 * (-1.0) / 0.1).abs() < 1e-12);
    }

    #[test]
    fn filtered_derivative_backward_euler() {
        let mut g = PidGains::unbounded(0.0, 0.0, 1.0);
        g.derivative_filter_n = 10.0;
        let (_, s) = pid_step(&g, &PidState::fresh(), 0.0, 0.0, H).unwrap();
        let (u, s) = pid_step(&g, &s, 1.0, 0.0, H).unwrap();
        // D = (0 + 1*10*1) / (1 + 10*0.1) = 5
        assert!((u - 5.0).abs() < 1e-12);
        let (u, _) = pid_step(&g, &s, 1.0, 0.0, H).unwrap();
        assert!((u - 2.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let g = PidGains::default();
        assert!(matches!(
            pid_step(&g, &PidState::fresh(), f64::NAN, 0.0, H),
            Err(ControlError::NonFiniteInput { .. })
        ));
        assert!(matches!(
            pid_step(&g, &PidState::fresh(), 1.0, f64::INFINITY, H),
            Err(ControlError::NonFiniteInput { .. })
        ));
    }

    #[test]
    fn reset_restores_first_step_behavior() {
        let g = PidGains {
            kd: 0.5,
            ..PidGains::default()
        };
        let mut s = PidState::fresh();
        for y in [0.0, 1.0, 3.0, 6.0] {
            s = pid_step(&g, &s, 10.0, y, H).unwrap().1;
        }
        let fresh = pid_reset(&s);
        assert_eq!(fresh, PidState::fresh());
        assert_eq!(pid_reset(&fresh), fresh);
        assert_eq!(
            pid_step(&g, &fresh, 10.0, 2.0, H).unwrap(),
            pid_step(&g, &PidState::fresh(), 10.0, 2.0, H).unwrap()
        );
    }

    #[test]
    fn gain_validation() {
        let mut g = PidGains::default();
        g.kd = f64::NAN;
        assert!(g.validate().is_err());
        let mut g = PidGains::default();
        g.u_min = 4.0;
        assert!(g.validate().is_err());
        let mut g = PidGains::default();
        g.kp = -1.0;
        assert!(g.validate().is_err());
        assert!(PidGains::default().validate().is_ok());
    }

    fn gains_strategy() -> impl Strategy<Value = PidGains> {
        (0.0..20.0, 0.0..5.0, 0.0..2.0, -10.0..0.0, 0.1..10.0, prop_oneof![Just(0.0), 1.0..50.0])
            .prop_map(|(kp, ki, kd, lo, span, n)| PidGains {
                kp,
                ki,
                kd,
                u_min: lo,
                u_max: lo + span,
                derivative_filter_n: n,
            })
    }

    proptest! {
        #[test]
        fn output_stays_within_limits(g in gains_strategy(), seq in prop::collection::vec((-100.0..100.0, -100.0..100.0), 1..60)) {
            let mut s = PidState::fresh();
            for (r, y) in seq {
                let (u, n) = pid_step(&g, &s, r, y, H).unwrap();
                prop_assert!(u >= g.u_min && u <= g.u_max);
                s = n;
            }
        }

        #[test]
        fn superposition_without_saturation(kp in 0.0..10.0, ki in 0.0..5.0, errs in prop::collection::vec(-10.0..10.0, 1..50)) {
            let g = PidGains::unbounded(kp, ki, 0.0);
            let (mut s1, mut s2) = (PidState::fresh(), PidState::fresh());
            for e in errs {
                let (u1, n1) = pid_step(&g, &s1, e, 0.0, H).unwrap();
                let (u2, n2) = pid_step(&g, &s2, 2.0 * e, 0.0, H).unwrap();
                prop_assert!((u2 - 2.0 * u1).abs() <= 1e-9 * (1.0 + u1.abs()));
                s1 = n1;
                s2 = n2;
            }
        }

        #[test]
        fn integral_bounded_under_step_reference(g in gains_strategy(), e in 0.1f64..50.0, steps in 1usize..300) {
            // plant frozen at y = 0: constant positive error
            let hs = H.as_secs_f64();
            let bound = (g.u_max - g.kp * e).max(0.0) + g.ki * hs * e;
            let mut s = PidState::fresh();
            for _ in 0..steps {
                s = pid_step(&g, &s, e, 0.0, H).unwrap().1;
                prop_assert!(s.integral <= bound + 1e-9, "integral {} > {}", s.integral, bound);
            }
        }

        #[test]
        fn identical_inputs_give_identical_bits(g in gains_strategy(), seq in prop::collection::vec((-50.0..50.0, -50.0..50.0), 1..40)) {
            let (mut a, mut b) = (PidState::fresh(), PidState::fresh());
            for (r, y) in seq {
                let (ua, na) = pid_step(&g, &a, r, y, H).unwrap();
                let (ub, nb) = pid_step(&g, &b, r, y, H).unwrap();
                prop_assert_eq!(ua.to_bits(), ub.to_bits());
                a = na;
                b = nb;
            }
        }
    }
}
