//! Desired periodic impact states and operator command mapping.

use serde::{Deserialize, Serialize};

use crate::alip::{step_transition, AlipState, ModelError, RobotParams, StanceSide, TerrainPlane};

/// Operator command for the gait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitCommand {
    /// Desired longitudinal velocity [m/s].
    pub v_x_des: f64,
    /// Additional lateral angular momentum [kg m^2/s].
    pub lx_offset: f64,
    /// Desired turn per step [rad]; only used by the swing references.
    pub delta_psi: f64,
    /// Step width [m].
    pub step_width: f64,
}

impl GaitCommand {
    pub fn forward(v_x_des: f64, step_width: f64) -> Self {
        Self {
            v_x_des,
            lx_offset: 0.0,
            delta_psi: 0.0,
            step_width,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.v_x_des.is_finite() && self.lx_offset.is_finite() && self.delta_psi.is_finite()) {
            return Err(ModelError::NonFinite("gait command"));
        }
        if !(self.step_width.is_finite() && self.step_width >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "step_width",
                requirement: "finite and >= 0",
                value: self.step_width,
            });
        }
        Ok(())
    }
}

/// Desired pre-impact state at the end of a step taken on `stance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesiredImpactState {
    pub state: AlipState,
    pub stance: StanceSide,
}

/// `l = sqrt(g / z_H)`.
pub fn natural_frequency(params: &RobotParams, terrain: &TerrainPlane) -> Result<f64, ModelError> {
    params.validate()?;
    terrain.validate()?;
    Ok((params.gravity / terrain.z_h).sqrt())
}

/// `L_y = m z_H v`: the CoM translating parallel to the ground with no
/// momentum about the CoM.
pub fn velocity_to_momentum(v_x_des: f64, params: &RobotParams, terrain: &TerrainPlane) -> f64 {
    params.mass * terrain.z_h * v_x_des
}

/// Lateral counterpart of [`velocity_to_momentum`], expressed as the
/// `L_x` offset that requests lateral velocity `v_y` (`y_c_dot = -L_x / (m z_H)`).
pub fn lateral_velocity_to_offset(v_y_des: f64, params: &RobotParams, terrain: &TerrainPlane) -> f64 {
    -params.mass * terrain.z_h * v_y_des
}

/// Desired state at the end of a `stance` step on the 2-step periodic orbit.
pub fn desired_impact_state(
    l_y_des: f64,
    cmd: &GaitCommand,
    stance: StanceSide,
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<DesiredImpactState, ModelError> {
    cmd.validate()?;
    let l = natural_frequency(params, terrain)?;
    let mz = params.mass * terrain.z_h;
    let th = (0.5 * l * params.step_period).tanh();
    let sigma = stance.sigma();
    let w = cmd.step_width;
    Ok(DesiredImpactState {
        state: AlipState {
            x_c: th * l_y_des / (mz * l),
            y_c: -0.5 * sigma * w,
            l_x: 0.5 * sigma * mz * l * w * th + cmd.lx_offset,
            l_y: l_y_des,
        },
        stance,
    })
}

/// Desired impact state for the command's velocity.
pub fn desired_for_command(
    cmd: &GaitCommand,
    stance: StanceSide,
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<DesiredImpactState, ModelError> {
    let l_y = velocity_to_momentum(cmd.v_x_des, params, terrain);
    desired_impact_state(l_y, cmd, stance, params, terrain)
}

/// Stance leg of step `k` when step 0 is taken on `initial`.
pub fn stance_schedule(step_index: u64, initial: StanceSide) -> StanceSide {
    if step_index.is_multiple_of(2) {
        initial
    } else {
        initial.flipped()
    }
}

/// Post-impact state at the start of a `stance` step that reaches the desired
/// impact state after one step period.
pub fn orbit_start_state(
    cmd: &GaitCommand,
    stance: StanceSide,
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<AlipState, ModelError> {
    let end = desired_for_command(cmd, stance, params, terrain)?;
    // the flow is a hyperbolic rotation; its inverse is the same rotation run backwards
    let t = step_transition(params, terrain, params.step_period)?;
    let inv = t
        .try_inverse()
        .ok_or(ModelError::NonFinite("inverse step transition"))?;
    Ok(AlipState::from_vector(&(inv * end.state.to_vector())))
}
