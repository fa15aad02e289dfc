use super::{Dynamics, IntegratorConfig, PlantError, PlantState};
use crate::time::TickDuration;

/// One classical fourth-order Runge-Kutta step with `u` held constant.
pub fn rk4_step<F>(deriv: F, state: &PlantState, u: f64, dt: TickDuration) -> Result<PlantState, PlantError>
where
    F: Fn(&[f64], f64, &mut [f64]),
{
    assert!(dt.micros() > 0, "rk4 step must be positive");
    let h = dt.as_secs_f64();
    let n = state.x.len();
    let x = &state.x;

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    deriv(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    deriv(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    deriv(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    deriv(&tmp, u, &mut k4);

    let next: Vec<f64> = (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let t = state.t + dt;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::NonFiniteState { t, x: next });
    }
    Ok(PlantState { x: next, t })
}

/// Integrates over `duration` with the command held (zero-order hold),
/// projecting the state back into its admissible set after every substep.
pub fn advance_zoh<D>(
    model: &D,
    state: &PlantState,
    u: f64,
    duration: TickDuration,
    cfg: &IntegratorConfig,
) -> Result<PlantState, PlantError>
where
    D: Dynamics + ?Sized,
{
    let sub = cfg.substep.micros();
    if sub == 0 || !duration.micros().is_multiple_of(sub) {
        return Err(PlantError::Misaligned {
            duration: duration.micros(),
            substep: sub,
        });
    }
    let steps = duration.micros() / sub;
    let mut s = state.clone();
    for _ in 0..steps {
        s = rk4_step(|x, v, dx| model.derivative(x, v, dx), &s, u, cfg.substep)?;
        model.project(&mut s.x);
    }
    Ok(s)
}
