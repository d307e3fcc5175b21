//! Phase-parameterized reference outputs for the nine virtual constraints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alip::TerrainPlane;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwingError {
    #[error("clearance phase must lie strictly inside (0, 1), got {0}")]
    ClearancePhase(f64),
    #[error("step period must be positive, got {0}")]
    StepPeriod(f64),
}

/// Output values at the start of the step, in row order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputInit {
    pub torso_pitch: f64,
    pub torso_roll: f64,
    pub stance_hip_yaw: f64,
    pub swing_hip_yaw: f64,
    pub com_height: f64,
    pub swing_x: f64,
    pub swing_y: f64,
    pub swing_z: f64,
    pub swing_toe_pitch: f64,
}

impl OutputInit {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.torso_pitch,
            self.torso_roll,
            self.stance_hip_yaw,
            self.swing_hip_yaw,
            self.com_height,
            self.swing_x,
            self.swing_y,
            self.swing_z,
            self.swing_toe_pitch,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingTargets {
    /// Stance-to-swing foot position at touchdown.
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    /// Turn over the step [rad].
    pub delta_psi: f64,
    pub z_h: f64,
    pub k_x: f64,
    /// Clearance knot `(s_cl, z_cl)`.
    pub s_cl: f64,
    pub z_cl: f64,
}

impl SwingTargets {
    /// Targets for placement `u` on `terrain`; the touchdown height follows the
    /// slope, `p_z = k_x u_x + k_y u_y`.
    pub fn from_placement(u: [f64; 2], terrain: &TerrainPlane, delta_psi: f64) -> Self {
        Self {
            p_x: u[0],
            p_y: u[1],
            p_z: terrain.k_x * u[0] + terrain.k_y * u[1],
            delta_psi,
            z_h: terrain.z_h,
            k_x: terrain.k_x,
            s_cl: 0.5,
            z_cl: 0.15,
        }
    }
}

/// `s = t / T_s`, clamped to `[0, 1]`. The flag is set when clamping happened.
pub fn phase(t_since_impact: f64, step_period: f64) -> Result<(f64, bool), SwingError> {
    if !(step_period.is_finite() && step_period > 0.0) {
        return Err(SwingError::StepPeriod(step_period));
    }
    let s = t_since_impact / step_period;
    if s < 0.0 || s.is_nan() {
        Ok((0.0, true))
    } else if s > 1.0 {
        Ok((1.0, true))
    } else {
        Ok((s, false))
    }
}

/// `(b1, b2, b3)` of `z(s) = b1 s^2 + b2 s + b3` through `(0, z_init)`,
/// `(1, z_final)` and `(s_cl, z_cl)`.
pub fn parabola_coeffs(z_init: f64, z_final: f64, s_cl: f64, z_cl: f64) -> Result<[f64; 3], SwingError> {
    if !(s_cl > 0.0 && s_cl < 1.0) {
        return Err(SwingError::ClearancePhase(s_cl));
    }
    let rise = z_final - z_init;
    let b1 = (z_cl - z_init - s_cl * rise) / (s_cl * s_cl - s_cl);
    Ok([b1, rise - b1, z_init])
}

/// Weights `(1/2 (1 + cos pi s), 1/2 (1 - cos pi s))` on the initial and the
/// target value.
pub fn blend_weights(s: f64) -> (f64, f64) {
    let c = (std::f64::consts::PI * s).cos();
    (0.5 * (1.0 + c), 0.5 * (1.0 - c))
}

/// Reference outputs `h_d(s)`.
pub fn reference_outputs(s: f64, init: &OutputInit, targets: &SwingTargets) -> Result<[f64; 9], SwingError> {
    let s = s.clamp(0.0, 1.0);
    let (w0, w1) = blend_weights(s);
    let [b1, b2, b3] = parabola_coeffs(init.swing_z, targets.p_z, targets.s_cl, targets.z_cl)?;
    let half_turn = 0.5 * targets.delta_psi;
    let mut h = [
        0.0,
        0.0,
        (1.0 - s) * init.stance_hip_yaw - s * half_turn,
        (1.0 - s) * init.swing_hip_yaw + s * half_turn,
        targets.z_h,
        w0 * init.swing_x + w1 * targets.p_x,
        w0 * init.swing_y + w1 * targets.p_y,
        (b1 * s + b2) * s + b3,
        targets.k_x,
    ];
    // hit the knots exactly rather than through the blend arithmetic
    if s == 0.0 {
        h[5] = init.swing_x;
        h[6] = init.swing_y;
        h[7] = init.swing_z;
    } else if s == 1.0 {
        h[2] = -half_turn;
        h[3] = half_turn;
        h[5] = targets.p_x;
        h[6] = targets.p_y;
        h[7] = targets.p_z;
    }
    Ok(h)
}

/// CoM height above the projected ground point, `p_z - k_x p_x - k_y p_y`.
pub fn com_height_output(p_st_com: [f64; 3], terrain: &TerrainPlane) -> f64 {
    p_st_com[2] - terrain.k_x * p_st_com[0] - terrain.k_y * p_st_com[1]
}
