//! Named example plants.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::ContinuousPlant;

/// Names accepted by [`build_preset_plant`].
pub const PRESETS: &[&str] = &["rotary_servo"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown plant preset {name:?}; available presets: {}", PRESETS.join(", "))]
pub struct UnknownPreset {
    pub name: String,
}

/// Physical parameters of a DC-motor driven rotary servo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoParameters {
    /// Armature resistance in Ω.
    pub r_m: f64,
    /// Motor inertia in kg·m².
    pub j_m: f64,
    /// Viscous friction in N·m·s.
    pub k_r: f64,
    /// Back-emf constant in V·s.
    pub k_m: f64,
    /// Gear ratio.
    pub k_g: f64,
    /// Motor and gearbox efficiency.
    pub eta: f64,
}

impl Default for ServoParameters {
    fn default() -> Self {
        Self {
            r_m: 2.6,
            j_m: 2.08e-3,
            k_r: 48e-3,
            k_m: 9.37e-3,
            k_g: 70.0,
            eta: 0.621,
        }
    }
}

impl ServoParameters {
    /// Input gain `Θ = η k_G k_M / (J_M R_M)`.
    pub fn theta(&self) -> f64 {
        self.eta * self.k_g * self.k_m / (self.j_m * self.r_m)
    }

    /// States are shaft angle and angular speed.
    pub fn plant(&self) -> ContinuousPlant {
        let theta = self.theta();
        let damping = theta * self.k_g * self.k_m + self.k_r / self.j_m;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -damping]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, theta]);
        ContinuousPlant::new(a, b).expect("servo parameters are finite")
    }
}

pub fn rotary_servo() -> ContinuousPlant {
    ServoParameters::default().plant()
}

pub fn build_preset_plant(name: &str) -> Result<ContinuousPlant, UnknownPreset> {
    match name {
        "rotary_servo" => Ok(rotary_servo()),
        _ => Err(UnknownPreset { name: name.to_string() }),
    }
}
