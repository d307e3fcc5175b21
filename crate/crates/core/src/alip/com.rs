//! Exact CoM dynamics about a point contact, used as a plant and as the
//! oracle that the linear model is checked against.

use nalgebra::{Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{build_alip_matrix, AlipState, ComState, ModelError, RobotParams, TerrainPlane};

/// Angular momentum about the CoM (exogenous in this model).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidalMomentum {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CentroidalMomentum {
    pub fn zero() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComVariant {
    /// CoM slaved to the terrain plane; the implicit velocity system is solved
    /// exactly.
    ExactPre,
    /// Same physics, written with `L_z` reconstructed explicitly.
    ExactPost,
    /// Linear model: cross term and `L_c` dropped.
    Alip,
}

/// Transient deviation of the CoM height from the terrain-plane relation.
///
/// `z_c = k_x x_c + k_y y_c + z_H + value`, `d/dt` of the deviation is `rate`.
/// Zero whenever the height relation is realized exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeightOffset {
    pub value: f64,
    pub rate: f64,
}

/// `L = L_c + p x m p_dot` with `z_c` and `z_c_dot` from the terrain plane.
pub fn reconstruct_angular_momentum(
    state: &ComState,
    velocity: &Vector2<f64>,
    lc: &CentroidalMomentum,
    terrain: &TerrainPlane,
    mass: f64,
) -> Vector3<f64> {
    let p = Vector3::new(state.x_c, state.y_c, state.com_height(terrain));
    let p_dot = Vector3::new(
        velocity[0],
        velocity[1],
        terrain.k_x * velocity[0] + terrain.k_y * velocity[1],
    );
    Vector3::new(lc.x, lc.y, lc.z) + p.cross(&p_dot) * mass
}

/// Right-hand side of the CoM dynamics in ALIP coordinates.
pub fn com_dynamics_rhs(
    state: &ComState,
    lc: &CentroidalMomentum,
    params: &RobotParams,
    terrain: &TerrainPlane,
    variant: ComVariant,
) -> Result<Vector4<f64>, ModelError> {
    com_dynamics_rhs_with_offset(
        state,
        lc,
        params,
        terrain,
        variant,
        HeightOffset::default(),
    )
}

/// [`com_dynamics_rhs`] with a prescribed CoM height transient.
///
/// Only [`ComVariant::ExactPre`] accepts a non-zero offset; the linear model
/// has no height transients and the explicit `L_z` form is only valid on the
/// terrain plane.
pub fn com_dynamics_rhs_with_offset(
    state: &ComState,
    lc: &CentroidalMomentum,
    params: &RobotParams,
    terrain: &TerrainPlane,
    variant: ComVariant,
    offset: HeightOffset,
) -> Result<Vector4<f64>, ModelError> {
    params.validate()?;
    terrain.validate()?;
    if !state.is_finite() {
        return Err(ModelError::NonFinite("CoM state"));
    }
    let m = params.mass;
    let mg = m * params.gravity;
    let momentum_rates = (-mg * state.y_c, mg * state.x_c);

    match variant {
        ComVariant::Alip => {
            let a = build_alip_matrix(params, terrain)?;
            Ok(a * state.to_vector())
        }
        ComVariant::ExactPre => {
            let v = solve_com_velocity(state, lc, params, terrain, offset)?;
            Ok(Vector4::new(v[0], v[1], momentum_rates.0, momentum_rates.1))
        }
        ComVariant::ExactPost => {
            if offset != HeightOffset::default() {
                return Err(ModelError::InvalidParameter {
                    name: "height offset",
                    requirement: "zero for the explicit L_z form",
                    value: offset.value,
                });
            }
            let v = solve_com_velocity(state, lc, params, terrain, offset)?;
            let l = reconstruct_angular_momentum(state, &v, lc, terrain, m);
            let mz = m * terrain.z_h;
            let lz_rel = l[2] - lc.z;
            let x_dot = state.l_y / mz + terrain.k_y / mz * lz_rel - lc.y / mz;
            let y_dot = -state.l_x / mz - terrain.k_x / mz * lz_rel + lc.x / mz;
            Ok(Vector4::new(x_dot, y_dot, momentum_rates.0, momentum_rates.1))
        }
    }
}

/// Solve the 2x2 linear system for `(x_c_dot, y_c_dot)`.
///
/// The CoM velocity appears on both sides once `z_c_dot` is expanded through
/// the height relation; the determinant is `z_c (z_c - k_x x_c - k_y y_c)`.
fn solve_com_velocity(
    state: &ComState,
    lc: &CentroidalMomentum,
    params: &RobotParams,
    terrain: &TerrainPlane,
    offset: HeightOffset,
) -> Result<Vector2<f64>, ModelError> {
    let (x, y) = (state.x_c, state.y_c);
    let (kx, ky) = (terrain.k_x, terrain.k_y);
    let m = params.mass;
    let z = kx * x + ky * y + terrain.z_h + offset.value;

    let a11 = z - kx * x;
    let a12 = -ky * x;
    let a21 = -kx * y;
    let a22 = z - ky * y;
    let det = a11 * a22 - a12 * a21;
    let scale = terrain.z_h * terrain.z_h;
    if !(z > 1e-9 * terrain.z_h) || det.abs() <= 1e-12 * scale {
        return Err(ModelError::Singular { x_c: x, y_c: y });
    }
    let b1 = (state.l_y - lc.y) / m + x * offset.rate;
    let b2 = (-state.l_x + lc.x) / m + y * offset.rate;
    Ok(Vector2::new(
        (b1 * a22 - a12 * b2) / det,
        (a11 * b2 - a21 * b1) / det,
    ))
}

/// Uniformly sampled trajectory from [`integrate_com`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ComState>,
}

impl ComTrajectory {
    pub fn final_state(&self) -> ComState {
        *self.states.last().expect("trajectory always holds the initial sample")
    }
}

/// One classical RK4 step of a time-varying vector field.
pub(crate) fn rk4_step<F>(f: &mut F, t: f64, x: &Vector4<f64>, h: f64) -> Result<Vector4<f64>, ModelError>
where
    F: FnMut(f64, &Vector4<f64>) -> Result<Vector4<f64>, ModelError>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Fixed-step RK4 integration of [`com_dynamics_rhs`] over `[0, T]`.
///
/// Samples at `0, h, 2h, ...`; if `T` is not a multiple of `h` the final step
/// is shortened so the last sample lands on `T`.
pub fn integrate_com<F>(
    x0: &ComState,
    lc_profile: F,
    params: &RobotParams,
    terrain: &TerrainPlane,
    horizon: f64,
    step: f64,
    variant: ComVariant,
) -> Result<ComTrajectory, ModelError>
where
    F: Fn(f64) -> CentroidalMomentum,
{
    if !(horizon.is_finite() && step.is_finite() && horizon > 0.0 && step > 0.0 && step <= horizon)
    {
        return Err(ModelError::InvalidHorizon { horizon, step });
    }
    let ratio = horizon / step;
    let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };

    let mut rhs = |t: f64, x: &Vector4<f64>| {
        com_dynamics_rhs(&AlipState::from_vector(x), &lc_profile(t), params, terrain, variant)
    };

    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = x0.to_vector();
    times.push(0.0);
    states.push(*x0);
    for i in 0..n {
        let t = i as f64 * step;
        let (h, t_next) = if i + 1 == n { (horizon - t, horizon) } else { (step, (i + 1) as f64 * step) };
        x = rk4_step(&mut rhs, t, &x, h)?;
        times.push(t_next);
        states.push(AlipState::from_vector(&x));
    }
    Ok(ComTrajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alip::step_transition;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn flat_exact_equals_alip() {
        let t = TerrainPlane::flat(0.6, 0.8);
        let s = AlipState::new(0.12, -0.07, 3.0, 18.0);
        let lc = CentroidalMomentum::zero();
        let pre = com_dynamics_rhs(&s, &lc, &params(), &t, ComVariant::ExactPre).unwrap();
        let alip = com_dynamics_rhs(&s, &lc, &params(), &t, ComVariant::Alip).unwrap();
        assert!((pre - alip).amax() <= 1e-15 * alip.amax());
    }

    #[test]
    fn pure_sagittal_motion_has_no_cross_term() {
        let t = TerrainPlane {
            k_x: 0.2,
            k_y: 0.0,
            mu: 0.6,
            z_h: 0.8,
        };
        let s = AlipState::new(0.1, 0.0, 0.0, 20.0);
        let lc = CentroidalMomentum::zero();
        let pre = com_dynamics_rhs(&s, &lc, &params(), &t, ComVariant::ExactPre).unwrap();
        let alip = com_dynamics_rhs(&s, &lc, &params(), &t, ComVariant::Alip).unwrap();
        assert_eq!(pre[1], 0.0);
        assert!((pre - alip).norm() < 1e-15);
    }

    #[test]
    fn pre_and_post_forms_agree() {
        let t = TerrainPlane {
            k_x: 0.2,
            k_y: 0.1,
            mu: 0.6,
            z_h: 0.8,
        };
        let lc = CentroidalMomentum { x: 0.3, y: -0.2, z: 0.4 };
        for s in [
            AlipState::new(0.1, 0.05, 1.0, 5.0),
            AlipState::new(-0.2, 0.15, -4.0, 22.0),
            AlipState::new(0.0, -0.3, 7.0, -3.0),
        ] {
            let pre = com_dynamics_rhs(&s, &lc, &params(), &t, ComVariant::ExactPre).unwrap();
            let post = com_dynamics_rhs(&s, &lc, &params(), &t, ComVariant::ExactPost).unwrap();
            assert!((pre - post).amax() < 1e-12, "{pre} vs {post}");
        }
    }

    #[test]
    fn reconstruction_recovers_state_momenta() {
        let t = TerrainPlane {
            k_x: -0.15,
            k_y: 0.25,
            mu: 0.8,
            z_h: 0.9,
        };
        let lc = CentroidalMomentum { x: 0.5, y: 0.1, z: -0.2 };
        let s = AlipState::new(0.08, -0.12, 2.5, 14.0);
        let v = solve_com_velocity(&s, &lc, &params(), &t, HeightOffset::default()).unwrap();
        let l = reconstruct_angular_momentum(&s, &v, &lc, &t, params().mass);
        assert!((l[0] - s.l_x).abs() < 1e-12);
        assert!((l[1] - s.l_y).abs() < 1e-12);
    }

    #[test]
    fn singular_configuration_is_reported() {
        // z_c = 0.5 * x_c + 0.8 vanishes at x_c = -1.6
        let t = TerrainPlane {
            k_x: 0.5,
            k_y: 0.0,
            mu: 1.0,
            z_h: 0.8,
        };
        let s = AlipState::new(-1.6, 0.0, 0.0, 1.0);
        let err = com_dynamics_rhs(&s, &CentroidalMomentum::zero(), &params(), &t, ComVariant::ExactPre);
        assert!(matches!(err, Err(ModelError::Singular { .. })));
    }

    #[test]
    fn post_form_rejects_height_offset() {
        let off = HeightOffset { value: 0.01, rate: 0.0 };
        let r = com_dynamics_rhs_with_offset(
            &AlipState::zero(),
            &CentroidalMomentum::zero(),
            &params(),
            &TerrainPlane::default(),
            ComVariant::ExactPost,
            off,
        );
        assert!(r.is_err());
    }

    #[test]
    fn integrator_matches_closed_form_flow() {
        let t = TerrainPlane::default();
        let x0 = AlipState::new(-0.13, 0.14, -7.0, 25.6);
        let traj = integrate_com(&x0, |_| CentroidalMomentum::zero(), &params(), &t, 0.3, 1e-3, ComVariant::Alip)
            .unwrap();
        assert_eq!(traj.times.len(), 301);
        assert!((traj.times[300] - 0.3).abs() < 1e-15);
        let exact = step_transition(&params(), &t, 0.3).unwrap() * x0.to_vector();
        assert!((traj.final_state().to_vector() - exact).amax() < 1e-8);
    }

    #[test]
    fn integrator_shortens_last_step() {
        let traj = integrate_com(
            &AlipState::new(0.1, 0.0, 0.0, 0.0),
            |_| CentroidalMomentum::zero(),
            &params(),
            &TerrainPlane::default(),
            0.25,
            0.1,
            ComVariant::Alip,
        )
        .unwrap();
        assert_eq!(traj.times, vec![0.0, 0.1, 0.2, 0.25]);
    }

    #[test]
    fn integrator_rejects_bad_horizon() {
        let r = integrate_com(
            &AlipState::zero(),
            |_| CentroidalMomentum::zero(),
            &params(),
            &TerrainPlane::default(),
            0.1,
            0.2,
            ComVariant::Alip,
        );
        assert!(matches!(r, Err(ModelError::InvalidHorizon { .. })));
    }
}
