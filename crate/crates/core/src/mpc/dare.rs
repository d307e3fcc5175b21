//! Terminal cost from the infinite-horizon step-to-step LQR problem.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::alip::{impact_matrix, step_transition, RobotParams, TerrainPlane};

/// How the step-to-step system is posed for the Riccati recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DareMode {
    /// `x+ = A_d x + A_d B u` between consecutive impacts.
    OneStep,
    /// Two steps lumped into one stage, `(A_d^2, [A_d^2 B, A_d B])`, with the
    /// intermediate impact state costed inside the stage.
    TwoStepLifted,
}

pub const DARE_TOL: f64 = 1e-10;
const DARE_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub iterations: usize,
    /// `|F(P) - P|_inf` for the Riccati map `F`.
    pub residual: f64,
}

/// One application of the Riccati map with stage cost
/// `x'Qx + 2 x'S u + u'R u`.
pub fn riccati_map(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>, MpcError> {
    let at_p = a.transpose() * p;
    let gain_rhs = b.transpose() * p * a + s.transpose();
    let gram = r + b.transpose() * p * b;
    let chol = gram.cholesky().ok_or(MpcError::RiccatiNotPositiveDefinite)?;
    let k = chol.solve(&gain_rhs);
    let next = q + &at_p * a - gain_rhs.transpose() * k;
    Ok((&next + next.transpose()) * 0.5)
}

/// Fixed point of [`riccati_map`] by value iteration from `P = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DareSolution, MpcError> {
    let mut p = q.clone();
    for it in 1..=DARE_MAX_ITER {
        let next = riccati_map(&p, a, b, q, r, s)?;
        let delta = (&next - &p).amax();
        p = next;
        if !delta.is_finite() {
            return Err(MpcError::RiccatiDiverged { iterations: it, delta });
        }
        if delta <= DARE_TOL {
            let residual = (riccati_map(&p, a, b, q, r, s)? - &p).amax();
            return Ok(DareSolution {
                p,
                iterations: it,
                residual,
            });
        }
    }
    Err(MpcError::RiccatiDiverged {
        iterations: DARE_MAX_ITER,
        delta: f64::NAN,
    })
}

/// Step-to-step pair `(A_d, B_d) = (exp(A T_s), exp(A T_s) B)`.
pub fn step_to_step_pair(
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<(DMatrix<f64>, DMatrix<f64>), MpcError> {
    let ad = step_transition(params, terrain, params.step_period)?;
    let bd = ad * impact_matrix();
    Ok((
        DMatrix::from_column_slice(4, 4, ad.as_slice()),
        DMatrix::from_column_slice(4, 2, bd.as_slice()),
    ))
}

/// Terminal weight `Q_f` for the horizon.
pub fn dare_terminal_cost(
    params: &RobotParams,
    terrain: &TerrainPlane,
    q_step: &Matrix4<f64>,
    mode: DareMode,
    regularization: f64,
) -> Result<(Matrix4<f64>, DareSolution), MpcError> {
    let (ad, bd) = step_to_step_pair(params, terrain)?;
    let q = DMatrix::from_column_slice(4, 4, q_step.as_slice());
    let sol = match mode {
        DareMode::OneStep => {
            let r = DMatrix::identity(2, 2) * regularization;
            let s = DMatrix::zeros(4, 2);
            solve_dare(&ad, &bd, &q, &r, &s)?
        }
        DareMode::TwoStepLifted => {
            let a2 = &ad * &ad;
            let mut b2 = DMatrix::zeros(4, 4);
            b2.view_mut((0, 0), (4, 2)).copy_from(&(&ad * &bd));
            b2.view_mut((0, 2), (4, 2)).copy_from(&bd);
            // intermediate state A_d x + B_d u1 costed with Q
            let mut e1 = DMatrix::zeros(4, 4);
            e1.view_mut((0, 0), (4, 2)).copy_from(&bd);
            let q2 = &q + ad.transpose() * &q * &ad;
            let s2 = ad.transpose() * &q * &e1;
            let r2 = DMatrix::identity(4, 4) * regularization + e1.transpose() * &q * &e1;
            solve_dare(&a2, &b2, &q2, &r2, &s2)?
        }
    };
    let p = Matrix4::from_column_slice(sol.p.as_slice());
    Ok((p, sol))
}
