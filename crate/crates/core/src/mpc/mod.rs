//! Receding-horizon foot-placement planner.

mod condense;
mod dare;
mod planner;
pub mod qp;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alip::ModelError;
use crate::constraints::{ConstraintError, WorkspaceConfig};

pub use condense::{condense, unstack, Condensed, Prediction};
pub use dare::{dare_terminal_cost, riccati_map, solve_dare, step_to_step_pair, DareMode, DareSolution, DARE_TOL};
pub use planner::{deadbeat_one_step, plan_footsteps, stack, FootPlan, FootPlanner, HorizonTerrain, PlanDiagnostics};
pub use qp::{solve_qp, KktResiduals, QpError, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("desired impact states must alternate stance")]
    StanceNotAlternating,
    #[error("initial state is not finite")]
    NonFiniteState,
    #[error("Riccati gram matrix is not positive definite")]
    RiccatiNotPositiveDefinite,
    #[error("Riccati iteration did not converge after {iterations} iterations (last change {delta})")]
    RiccatiDiverged { iterations: usize, delta: f64 },
    #[error("foot-placement QP infeasible after {iterations} iterations; blocking rows: {}", provenance.join(", "))]
    Infeasible {
        /// `tag@sample` labels of the certificate rows.
        provenance: Vec<String>,
        iterations: usize,
    },
    #[error("foot-placement QP hit the iteration cap ({iterations})")]
    MaxIterations { iterations: usize },
    #[error("deadbeat momentum map is singular (det {det})")]
    SingularDeadbeat { det: f64 },
}

/// Source of the terminal weight `Q_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalWeight {
    Dare(DareMode),
    /// Row-major 4x4.
    Fixed([[f64; 4]; 4]),
}

impl TerminalWeight {
    pub fn fixed(m: &Matrix4<f64>) -> Self {
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        TerminalWeight::Fixed(rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// `N_s`.
    pub horizon_steps: usize,
    /// `N_dt`.
    pub samples_per_step: usize,
    pub q_step: Matrix4<f64>,
    pub terminal: TerminalWeight,
    /// `None` drops every inequality row.
    pub workspace: Option<WorkspaceConfig>,
    /// Added to the Hessian diagonal and used as the DARE input weight.
    pub regularization: f64,
    /// Also bound the post-impact state at the start of every horizon step.
    pub constrain_post_impact: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 4,
            samples_per_step: 30,
            q_step: Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 0.05, 0.05)),
            terminal: TerminalWeight::Dare(DareMode::OneStep),
            workspace: Some(WorkspaceConfig::default()),
            regularization: 1e-9,
            constrain_post_impact: false,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon_steps == 0 {
            return Err(MpcError::InvalidConfig("horizon_steps must be >= 1"));
        }
        if self.samples_per_step == 0 {
            return Err(MpcError::InvalidConfig("samples_per_step must be >= 1"));
        }
        if !(self.regularization.is_finite() && self.regularization > 0.0) {
            return Err(MpcError::InvalidConfig("regularization must be positive"));
        }
        check_psd(&self.q_step, "q_step must be symmetric positive semidefinite")?;
        if let TerminalWeight::Fixed(_) = self.terminal {
            check_psd(&self.fixed_terminal().unwrap(), "terminal weight must be symmetric positive semidefinite")?;
        }
        if let Some(ws) = &self.workspace {
            ws.validate()?;
        }
        Ok(())
    }

    pub fn fixed_terminal(&self) -> Option<Matrix4<f64>> {
        match self.terminal {
            TerminalWeight::Fixed(rows) => Some(Matrix4::from_fn(|r, c| rows[r][c])),
            TerminalWeight::Dare(_) => None,
        }
    }
}

fn check_psd(m: &Matrix4<f64>, msg: &'static str) -> Result<(), MpcError> {
    if !m.iter().all(|v| v.is_finite()) || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(MpcError::InvalidConfig(msg));
    }
    if m.symmetric_eigenvalues().min() < -1e-12 * m.amax().max(1.0) {
        return Err(MpcError::InvalidConfig(msg));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        MpcConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = MpcConfig {
            horizon_steps: 0,
            ..MpcConfig::default()
        };
        assert!(c.validate().is_err());
        c.horizon_steps = 2;
        c.q_step[(0, 1)] = 1.0;
        assert!(c.validate().is_err());
        c.q_step = -Matrix4::identity();
        assert!(c.validate().is_err());
        c.q_step = Matrix4::identity();
        c.regularization = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fixed_terminal_round_trip() {
        let m = Matrix4::from_fn(|r, c| (r + 4 * c) as f64);
        let w = TerminalWeight::fixed(&m);
        let c = MpcConfig {
            terminal: w,
            ..MpcConfig::default()
        };
        assert_eq!(c.fixed_terminal().unwrap(), m);
    }
}
