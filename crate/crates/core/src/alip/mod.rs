//! Reduced-order centroidal model about the stance contact point.
//!
//! The state is `(x_c, y_c, L_x, L_y)`: CoM offset from the stance contact and
//! angular momentum about that contact. Between impacts the model evolves
//! linearly; at touchdown the contact frame jumps by the foot placement while
//! the momenta carry over.

pub(crate) mod com;
mod expm;

pub use com::{
    com_dynamics_rhs, com_dynamics_rhs_with_offset, integrate_com, reconstruct_angular_momentum,
    CentroidalMomentum, ComTrajectory, ComVariant, HeightOffset,
};
pub use expm::expm_oracle;

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("remaining time {remaining} s outside [0, {period}] s")]
    RemainingTimeOutOfRange { remaining: f64, period: f64 },
    #[error(
        "implicit CoM velocity system is singular at x_c={x_c}, y_c={y_c} \
         (CoM above the degenerate slope line)"
    )]
    Singular { x_c: f64, y_c: f64 },
    #[error("integration horizon T={horizon} s with step h={step} s is invalid")]
    InvalidHorizon { horizon: f64, step: f64 },
}

fn require_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            requirement: "finite and > 0",
            value,
        })
    }
}

fn require_non_negative(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            requirement: "finite and >= 0",
            value,
        })
    }
}

/// Model state, always ordered `(x_c, y_c, L_x, L_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlipState {
    /// Sagittal CoM offset from the stance contact [m].
    pub x_c: f64,
    /// Lateral CoM offset from the stance contact [m].
    pub y_c: f64,
    /// Angular momentum about the contact x-axis [kg m^2/s].
    pub l_x: f64,
    /// Angular momentum about the contact y-axis [kg m^2/s].
    pub l_y: f64,
}

/// The exact CoM model shares the ALIP coordinates; `z_c` is slaved to the
/// terrain plane.
pub type ComState = AlipState;

impl AlipState {
    pub const fn new(x_c: f64, y_c: f64, l_x: f64, l_y: f64) -> Self {
        Self { x_c, y_c, l_x, l_y }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x_c, self.y_c, self.l_x, self.l_y)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x_c.is_finite() && self.y_c.is_finite() && self.l_x.is_finite() && self.l_y.is_finite()
    }

    /// CoM height above the stance contact implied by the terrain plane.
    pub fn com_height(&self, terrain: &TerrainPlane) -> f64 {
        terrain.k_x * self.x_c + terrain.k_y * self.y_c + terrain.z_h
    }
}

impl From<Vector4<f64>> for AlipState {
    fn from(v: Vector4<f64>) -> Self {
        Self::from_vector(&v)
    }
}

impl From<AlipState> for Vector4<f64> {
    fn from(s: AlipState) -> Self {
        s.to_vector()
    }
}

/// Local planar terrain under the stance foot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainPlane {
    /// `tan` of the sagittal slope angle.
    pub k_x: f64,
    /// `tan` of the lateral slope angle.
    pub k_y: f64,
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// CoM height above the terrain plane [m].
    pub z_h: f64,
}

impl TerrainPlane {
    pub fn flat(mu: f64, z_h: f64) -> Self {
        Self {
            k_x: 0.0,
            k_y: 0.0,
            mu,
            z_h,
        }
    }

    /// Plane from slope angles in degrees.
    pub fn from_degrees(alpha_x: f64, alpha_y: f64, mu: f64, z_h: f64) -> Self {
        Self {
            k_x: alpha_x.to_radians().tan(),
            k_y: alpha_y.to_radians().tan(),
            mu,
            z_h,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.k_x.is_finite() || !self.k_y.is_finite() {
            return Err(ModelError::NonFinite("terrain slope"));
        }
        require_positive("z_h", self.z_h)?;
        require_non_negative("mu", self.mu)
    }

    /// Same friction and height with the slope information removed.
    pub fn flattened(&self) -> Self {
        Self {
            k_x: 0.0,
            k_y: 0.0,
            ..*self
        }
    }
}

impl Default for TerrainPlane {
    fn default() -> Self {
        Self::flat(0.6, 0.8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Total mass [kg].
    pub mass: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
    /// Fixed step period [s].
    pub step_period: f64,
    /// Nominal step width [m].
    pub step_width: f64,
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require_positive("mass", self.mass)?;
        require_positive("gravity", self.gravity)?;
        require_positive("step_period", self.step_period)?;
        require_non_negative("step_width", self.step_width)
    }
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 32.0,
            gravity: 9.81,
            step_period: 0.3,
            step_width: 0.3,
        }
    }
}

/// Which foot is on the ground: `+1` left, `-1` right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceSide {
    Left,
    Right,
}

impl StanceSide {
    pub fn sigma(self) -> f64 {
        match self {
            StanceSide::Left => 1.0,
            StanceSide::Right => -1.0,
        }
    }

    pub fn from_sigma(sigma: i32) -> Option<Self> {
        match sigma {
            1 => Some(StanceSide::Left),
            -1 => Some(StanceSide::Right),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            StanceSide::Left => StanceSide::Right,
            StanceSide::Right => StanceSide::Left,
        }
    }
}

fn validate_model(params: &RobotParams, terrain: &TerrainPlane) -> Result<(), ModelError> {
    params.validate()?;
    terrain.validate()
}

/// Continuous-time ALIP system matrix.
pub fn build_alip_matrix(
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<Matrix4<f64>, ModelError> {
    validate_model(params, terrain)?;
    let mz = params.mass * terrain.z_h;
    let mg = params.mass * params.gravity;
    let mut a = Matrix4::zeros();
    a[(0, 3)] = 1.0 / mz;
    a[(1, 2)] = -1.0 / mz;
    a[(2, 1)] = -mg;
    a[(3, 0)] = mg;
    Ok(a)
}

/// Impact map input matrix: foot placement shifts the CoM offsets only.
pub fn impact_matrix() -> Matrix4x2<f64> {
    let mut b = Matrix4x2::zeros();
    b[(0, 0)] = -1.0;
    b[(1, 1)] = -1.0;
    b
}

/// `exp(A dt)` in closed form.
///
/// Each decoupled block is a hyperbolic rotation with rate `l = sqrt(g / z_H)`.
pub fn step_transition(
    params: &RobotParams,
    terrain: &TerrainPlane,
    dt: f64,
) -> Result<Matrix4<f64>, ModelError> {
    validate_model(params, terrain)?;
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "dt",
            requirement: "finite and >= 0",
            value: dt,
        });
    }
    let l = (params.gravity / terrain.z_h).sqrt();
    let mzl = params.mass * terrain.z_h * l;
    let (sh, ch) = ((l * dt).sinh(), (l * dt).cosh());

    let mut t = Matrix4::zeros();
    // sagittal block (x_c, L_y)
    t[(0, 0)] = ch;
    t[(0, 3)] = sh / mzl;
    t[(3, 0)] = mzl * sh;
    t[(3, 3)] = ch;
    // frontal block (y_c, L_x)
    t[(1, 1)] = ch;
    t[(1, 2)] = -sh / mzl;
    t[(2, 1)] = -mzl * sh;
    t[(2, 2)] = ch;
    Ok(t)
}

/// Touchdown: `x+ = x- + B u_fp`.
pub fn apply_impact(x_minus: &AlipState, u_fp: &Vector2<f64>) -> AlipState {
    AlipState {
        x_c: x_minus.x_c - u_fp[0],
        y_c: x_minus.y_c - u_fp[1],
        ..*x_minus
    }
}

/// Propagate the measured state to the end of the current step.
pub fn predict_to_impact(
    x_t: &AlipState,
    time_remaining: f64,
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<AlipState, ModelError> {
    params.validate()?;
    // tolerate accumulated tick rounding at the step boundary
    let slack = 1e-12 * params.step_period.max(1.0);
    if !(time_remaining >= -slack && time_remaining <= params.step_period + slack) {
        return Err(ModelError::RemainingTimeOutOfRange {
            remaining: time_remaining,
            period: params.step_period,
        });
    }
    if !x_t.is_finite() {
        return Err(ModelError::NonFinite("state"));
    }
    let dt = time_remaining.clamp(0.0, params.step_period);
    let t = step_transition(params, terrain, dt)?;
    Ok(AlipState::from_vector(&(t * x_t.to_vector())))
}
