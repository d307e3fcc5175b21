//! Controller facade: predict to impact, build the horizon, solve, keep the
//! warm start.

use nalgebra::{DVector, Matrix2, Matrix4, Vector2};
use serde::Serialize;

use super::{condense, dare_terminal_cost, DareMode, solve_qp, unstack, KktResiduals, MpcConfig, MpcError, QpStatus, TerminalWeight};
use crate::alip::{impact_matrix, predict_to_impact, step_transition, AlipState, RobotParams, StanceSide, TerrainPlane};
use crate::reference::{desired_for_command, DesiredImpactState, GaitCommand};

/// Terrain during the rest of the current step and during each horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTerrain {
    pub current: TerrainPlane,
    pub steps: Vec<TerrainPlane>,
}

impl HorizonTerrain {
    pub fn uniform(terrain: TerrainPlane, horizon_steps: usize) -> Self {
        Self {
            current: terrain,
            steps: vec![terrain; horizon_steps],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanDiagnostics {
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
    pub objective: f64,
    /// `tag@sample` labels of the active rows.
    pub active: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FootPlan {
    pub u_first: Vector2<f64>,
    pub u_sequence: Vec<Vector2<f64>>,
    /// Predicted pre-impact state at the end of the current step.
    pub x0: AlipState,
    /// States at samples `0..=N_s N_dt`; sample `j N_dt` is the pre-impact
    /// state before placement `j`.
    pub predicted: Vec<AlipState>,
    pub desired: Vec<DesiredImpactState>,
    pub diagnostics: PlanDiagnostics,
}

impl FootPlan {
    /// Predicted pre-impact state at the end of horizon step `j`.
    pub fn impact_state(&self, j: usize) -> AlipState {
        let n_dt = (self.predicted.len() - 1) / self.u_sequence.len();
        self.predicted[(j + 1) * n_dt]
    }
}

/// Inputs the DARE weight depends on.
type TerminalKey = (RobotParams, f64, Matrix4<f64>, f64, DareMode);

/// Planner with warm-start and terminal-weight caches. One instance per
/// controller; instances are independent.
#[derive(Debug, Clone)]
pub struct FootPlanner {
    pub config: MpcConfig,
    warm: Option<(StanceSide, Vec<usize>)>,
    terminal_cache: Option<(TerminalKey, Matrix4<f64>)>,
}

impl FootPlanner {
    pub fn new(config: MpcConfig) -> Result<Self, MpcError> {
        config.validate()?;
        Ok(Self {
            config,
            warm: None,
            terminal_cache: None,
        })
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    /// `Q_f` for the last horizon step's terrain.
    pub fn terminal_weight(&mut self, params: &RobotParams, terrain: &TerrainPlane) -> Result<Matrix4<f64>, MpcError> {
        let mode = match self.config.terminal {
            TerminalWeight::Fixed(_) => return Ok(self.config.fixed_terminal().unwrap()),
            TerminalWeight::Dare(mode) => mode,
        };
        let key = (*params, terrain.z_h, self.config.q_step, self.config.regularization, mode);
        if let Some((k, p)) = &self.terminal_cache {
            if *k == key {
                return Ok(*p);
            }
        }
        let (p, _) = dare_terminal_cost(params, terrain, &self.config.q_step, mode, self.config.regularization)?;
        self.terminal_cache = Some((key, p));
        Ok(p)
    }

    /// Plan from the current state `x_t` with `time_remaining` left in the
    /// step on `stance`.
    pub fn plan(
        &mut self,
        x_t: &AlipState,
        time_remaining: f64,
        cmd: &GaitCommand,
        stance: StanceSide,
        params: &RobotParams,
        terrain: &HorizonTerrain,
    ) -> Result<FootPlan, MpcError> {
        let n_steps = self.config.horizon_steps;
        if terrain.steps.len() != n_steps {
            return Err(MpcError::DimensionMismatch {
                what: "horizon terrain steps",
                expected: n_steps,
                got: terrain.steps.len(),
            });
        }
        let x0 = predict_to_impact(x_t, time_remaining, params, &terrain.current)?;

        let mut side = stance;
        let desired: Vec<DesiredImpactState> = terrain
            .steps
            .iter()
            .map(|t| {
                side = side.flipped();
                desired_for_command(cmd, side, params, t)
            })
            .collect::<Result<_, _>>()?;

        let q_f = self.terminal_weight(params, terrain.steps.last().unwrap())?;
        let condensed = condense(&x0, &desired, &self.config, params, &terrain.steps, &q_f)?;

        let n_rows = condensed.qp.constraints.len();
        let warm = self.warm.take().map(|(prev, rows)| {
            if prev == stance {
                rows
            } else {
                shift_active_set(&rows, &self.config, n_rows)
            }
        });
        let warm: Option<Vec<usize>> = warm.map(|w| w.into_iter().filter(|&r| r < n_rows).collect());
        let sol = solve_qp(&condensed.qp, warm.as_deref())?;

        let label = |r: &usize| condensed.qp.constraints.rows[*r].to_string();
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                return Err(MpcError::Infeasible {
                    provenance: sol.certificate.iter().map(label).collect(),
                    iterations: sol.iterations,
                })
            }
            QpStatus::MaxIterations => {
                return Err(MpcError::MaxIterations {
                    iterations: sol.iterations,
                })
            }
        }
        self.warm = Some((stance, sol.active_set.clone()));

        let u_sequence = unstack(&sol.primal);
        Ok(FootPlan {
            u_first: u_sequence[0],
            predicted: condensed.prediction.states(&x0, &sol.primal),
            u_sequence,
            x0,
            desired,
            diagnostics: PlanDiagnostics {
                status: sol.status,
                residuals: sol.residuals,
                iterations: sol.iterations,
                objective: condensed.qp.objective(&sol.primal),
                active: sol.active_set.iter().map(label).collect(),
            },
        })
    }
}

/// Re-index an active set after the horizon advances by one step: rows of the
/// first step drop out and the rest move forward.
fn shift_active_set(rows: &[usize], config: &MpcConfig, n_rows: usize) -> Vec<usize> {
    if config.workspace.is_none() {
        return Vec::new();
    }
    let state_shift = 8 * (config.samples_per_step + usize::from(config.constrain_post_impact));
    let n_state = state_shift * config.horizon_steps;
    rows.iter()
        .filter_map(|&r| {
            if r < n_state {
                r.checked_sub(state_shift)
            } else {
                let k = r - n_state;
                (k >= 4).then(|| n_state + k - 4)
            }
        })
        .filter(|&r| r < n_rows)
        .collect()
}

/// Single stateless solve on uniform terrain.
pub fn plan_footsteps(
    x_t: &AlipState,
    time_remaining: f64,
    cmd: &GaitCommand,
    stance: StanceSide,
    config: &MpcConfig,
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<FootPlan, MpcError> {
    let mut planner = FootPlanner::new(config.clone())?;
    let preview = HorizonTerrain::uniform(*terrain, config.horizon_steps);
    planner.plan(x_t, time_remaining, cmd, stance, params, &preview)
}

/// Placement that brings `(L_x, L_y)` to `target` one step period after the
/// impact, given the pre-impact state `x0`.
pub fn deadbeat_one_step(
    x0: &AlipState,
    target: Vector2<f64>,
    params: &RobotParams,
    terrain: &TerrainPlane,
) -> Result<Vector2<f64>, MpcError> {
    let ad = step_transition(params, terrain, params.step_period)?;
    let bd = ad * impact_matrix();
    let m: Matrix2<f64> = bd.fixed_view::<2, 2>(2, 0).into_owned();
    let free = (ad * x0.to_vector()).fixed_rows::<2>(2).into_owned();
    let det = m.determinant();
    let scale = params.mass * terrain.z_h;
    if det.abs() <= 1e-12 * scale * scale {
        return Err(MpcError::SingularDeadbeat { det });
    }
    let inv = m.try_inverse().ok_or(MpcError::SingularDeadbeat { det })?;
    Ok(inv * (target - free))
}

/// Stacked placements as a `DVector`.
pub fn stack(u: &[Vector2<f64>]) -> DVector<f64> {
    DVector::from_iterator(2 * u.len(), u.iter().flat_map(|v| [v.x, v.y]))
}
