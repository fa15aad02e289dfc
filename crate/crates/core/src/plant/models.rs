use serde::{Deserialize, Serialize};

use super::{Dynamics, PlantError};

/// Gravity-drained single tank, `dH/dt = (k_in * max(u, 0) - c * sqrt(H)) / A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterTankParams {
    pub area: f64,
    pub inflow_gain: f64,
    pub outflow_coeff: f64,
    pub level_init: f64,
}

impl Default for WaterTankParams {
    fn default() -> Self {
        WaterTankParams {
            area: 1.0,
            inflow_gain: 1.0,
            outflow_coeff: 0.5,
            level_init: 0.0,
        }
    }
}

impl WaterTankParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::InvalidParams(m.to_string()));
        if !(self.area.is_finite() && self.area > 0.0) {
            return bad("area must be > 0");
        }
        if !(self.inflow_gain.is_finite() && self.inflow_gain > 0.0) {
            return bad("inflow_gain must be > 0");
        }
        if !(self.outflow_coeff.is_finite() && self.outflow_coeff >= 0.0) {
            return bad("outflow_coeff must be >= 0");
        }
        if !(self.level_init.is_finite() && self.level_init >= 0.0) {
            return bad("level_init must be >= 0");
        }
        Ok(())
    }

    /// Command that holds the tank at `level`.
    pub fn equilibrium_command(&self, level: f64) -> f64 {
        self.outflow_coeff * level.max(0.0).sqrt() / self.inflow_gain
    }
}

/// Level rate of change. Negative commands close the valve.
pub fn tank_derivative(level: f64, u: f64, p: &WaterTankParams) -> f64 {
    (p.inflow_gain * u.max(0.0) - p.outflow_coeff * level.max(0.0).sqrt()) / p.area
}

/// First-order lag, `tau * dx/dt = gain * u - x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderParams {
    pub gain: f64,
    pub time_constant: f64,
    pub x_init: f64,
}

impl Default for FirstOrderParams {
    fn default() -> Self {
        FirstOrderParams {
            gain: 1.0,
            time_constant: 1.0,
            x_init: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PlantModel {
    WaterTank(WaterTankParams),
    FirstOrder(FirstOrderParams),
}

impl Default for PlantModel {
    fn default() -> Self {
        PlantModel::WaterTank(WaterTankParams::default())
    }
}

impl PlantModel {
    pub fn validate(&self) -> Result<(), PlantError> {
        match self {
            PlantModel::WaterTank(p) => p.validate(),
            PlantModel::FirstOrder(p) => {
                if !(p.time_constant.is_finite() && p.time_constant > 0.0) {
                    return Err(PlantError::InvalidParams("time_constant must be > 0".into()));
                }
                if !p.gain.is_finite() || !p.x_init.is_finite() {
                    return Err(PlantError::InvalidParams(
                        "gain and x_init must be finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            PlantModel::WaterTank(p) => vec![p.level_init],
            PlantModel::FirstOrder(p) => vec![p.x_init],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlantModel::WaterTank(_) => "water_tank",
            PlantModel::FirstOrder(_) => "first_order",
        }
    }
}

impl Dynamics for PlantModel {
    fn dim(&self) -> usize {
        1
    }

    fn derivative(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        match self {
            PlantModel::WaterTank(p) => dx[0] = tank_derivative(x[0], u, p),
            PlantModel::FirstOrder(p) => dx[0] = (p.gain * u - x[0]) / p.time_constant,
        }
    }

    fn project(&self, x: &mut [f64]) {
        if let PlantModel::WaterTank(_) = self {
            if x[0] < 0.0 {
                x[0] = 0.0;
            }
        }
    }
}
