//! Fixed-step closed loop: plant, periodic replanning, impacts on the step grid.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use nalgebra::{Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::events::{detect_events, Event, EventKind, EVENT_TOL};
use super::log::{ImpactRecord, LogRecord, SimLog, SolveStatus};
use super::scenario::{PlantModel, Scenario};
use super::SimError;
use crate::alip::com::rk4_step;
use crate::alip::{
    apply_impact, com_dynamics_rhs_with_offset, predict_to_impact, step_transition, AlipState, CentroidalMomentum,
    ComVariant, HeightOffset, ModelError, RobotParams, TerrainPlane,
};
use crate::constraints::WorkspaceConfig;
use crate::mpc::{deadbeat_one_step, FootPlanner, MpcError};
use crate::reference::desired_for_command;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall-clock solve times. Off by default so logs are reproducible
    /// byte for byte.
    pub wall_clock: bool,
}

#[derive(Debug, Clone, Copy)]
struct ControllerOutput {
    u: Vector2<f64>,
    x0_pred: AlipState,
    status: SolveStatus,
    iterations: usize,
    solve_time: f64,
}

/// Height of the CoM above the surface the controller regulates to, decaying
/// over the step with the swing blend `1/2 (1 + cos pi s)`.
#[derive(Debug, Clone, Copy)]
struct HeightMismatch {
    initial: f64,
    t_start: f64,
    period: f64,
}

impl HeightMismatch {
    fn at(&self, t: f64) -> HeightOffset {
        let s = ((t - self.t_start) / self.period).clamp(0.0, 1.0);
        HeightOffset {
            value: 0.5 * self.initial * (1.0 + (PI * s).cos()),
            rate: -0.5 * self.initial * PI / self.period * (PI * s).sin(),
        }
    }
}

struct Plant<'a> {
    scenario: &'a Scenario,
    phases: [f64; 2],
    closed_form: Option<(f64, Matrix4<f64>)>,
}

impl Plant<'_> {
    fn disturbance(&self, t: f64) -> CentroidalMomentum {
        match self.scenario.plant.disturbance {
            Some(d) if d.amplitude > 0.0 => CentroidalMomentum {
                x: d.amplitude * (TAU * d.frequency * t + self.phases[0]).sin(),
                y: d.amplitude * (TAU * d.frequency * t + self.phases[1]).sin(),
                z: 0.0,
            },
            _ => CentroidalMomentum::zero(),
        }
    }

    fn has_disturbance(&self) -> bool {
        self.scenario.plant.disturbance.is_some_and(|d| d.amplitude > 0.0)
    }

    /// Advance by one plant step. `surface` is the plane the CoM height is
    /// regulated to.
    fn step(
        &mut self,
        x: &AlipState,
        t: f64,
        surface: &TerrainPlane,
        mismatch: &HeightMismatch,
    ) -> Result<AlipState, ModelError> {
        let params = &self.scenario.robot;
        let h = self.scenario.plant.step;
        let exact = self.scenario.plant.model == PlantModel::Exact;
        if !exact && !self.has_disturbance() {
            let a = match self.closed_form {
                Some((z_h, a)) if z_h == surface.z_h => a,
                _ => {
                    let a = step_transition(params, surface, h)?;
                    self.closed_form = Some((surface.z_h, a));
                    a
                }
            };
            return Ok(AlipState::from_vector(&(a * x.to_vector())));
        }
        let mut f = |tt: f64, v: &Vector4<f64>| -> Result<Vector4<f64>, ModelError> {
            let s = AlipState::from_vector(v);
            let lc = self.disturbance(tt);
            if exact {
                com_dynamics_rhs_with_offset(&s, &lc, params, surface, ComVariant::ExactPre, mismatch.at(tt))
            } else {
                // linear model with the centroidal momentum kept
                let mz = params.mass * surface.z_h;
                let mut d =
                    com_dynamics_rhs_with_offset(&s, &lc, params, surface, ComVariant::Alip, HeightOffset::default())?;
                d[0] -= lc.y / mz;
                d[1] += lc.x / mz;
                Ok(d)
            }
        };
        Ok(AlipState::from_vector(&rk4_step(&mut f, t, &x.to_vector(), h)?))
    }
}

fn clamp_to_inputs(u: Vector2<f64>, ws: Option<&WorkspaceConfig>, stance: crate::alip::StanceSide) -> Vector2<f64> {
    match ws {
        None => u,
        Some(ws) => {
            let uy = ws.u_y_for(stance);
            Vector2::new(u.x.clamp(ws.u_x.lower, ws.u_x.upper), u.y.clamp(uy.lower, uy.upper))
        }
    }
}

pub fn run_closed_loop(scenario: &Scenario) -> Result<SimLog, SimError> {
    run_closed_loop_with(scenario, &RunOptions::default())
}

pub fn run_closed_loop_with(scenario: &Scenario, opts: &RunOptions) -> Result<SimLog, SimError> {
    scenario.validate()?;
    let params: RobotParams = scenario.robot;
    let period = params.step_period;
    let h = scenario.plant.step;
    let (per_step, per_ctrl, total) = scenario.tick_counts();
    let ws = scenario.controller.mpc.workspace.as_ref();
    let safety = ws.map_or(WorkspaceConfig::default().mu_safety_factor, |w| w.mu_safety_factor);
    let bounds_ws = WorkspaceConfig {
        mu_safety_factor: safety,
        ..WorkspaceConfig::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let phases = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
    let mut plant = Plant {
        scenario,
        phases,
        closed_form: None,
    };
    let mut planner = FootPlanner::new(scenario.controller.mpc.clone())?;

    let mut log = SimLog::default();
    let mut x = scenario.initial_state;
    let mut stance = scenario.initial_stance;
    let mut step_index: u64 = 0;
    let mut foot_world = Vector2::zeros();
    let mut mismatch = HeightMismatch {
        initial: 0.0,
        t_start: 0.0,
        period,
    };
    let mut ctrl = ControllerOutput {
        u: Vector2::zeros(),
        x0_pred: x,
        status: SolveStatus::Optimal,
        iterations: 0,
        solve_time: 0.0,
    };

    for tick in 0..=total {
        let t = tick as f64 * h;
        let k = tick % per_step;
        if tick > 0 && k == 0 {
            let pre = x;
            let u = ctrl.u;
            x = apply_impact(&pre, &u);
            let com_world = foot_world + Vector2::new(pre.x_c, pre.y_c);
            foot_world += u;
            log.impacts.push(ImpactRecord {
                t,
                step_index,
                stance,
                pre,
                post: x,
                predicted_pre: ctrl.x0_pred,
                u,
                foot_world,
                com_world,
            });
            // the new foot lands on the true ground while the height target
            // follows the believed ground
            let believed = scenario.believed_terrain_at(t);
            let actual = scenario.terrain_at(t);
            mismatch = HeightMismatch {
                initial: (believed.k_x - actual.k_x) * u.x + (believed.k_y - actual.k_y) * u.y,
                t_start: t,
                period,
            };
            stance = stance.flipped();
            step_index += 1;
        }

        if tick < total && tick % per_ctrl == 0 {
            let remaining = (per_step - k) as f64 * h;
            let preview = scenario.horizon_preview(t, step_index);
            let cmd = scenario.command_at(t);
            let x0_pred = predict_to_impact(&x, remaining, &params, &preview.current)?;
            let clock = opts.wall_clock.then(Instant::now);
            let result = planner.plan(&x, remaining, &cmd, stance, &params, &preview);
            let solve_time = clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
            ctrl = match result {
                Ok(plan) => ControllerOutput {
                    u: plan.u_first,
                    x0_pred: plan.x0,
                    status: SolveStatus::Optimal,
                    iterations: plan.diagnostics.iterations,
                    solve_time,
                },
                Err(e) => {
                    let (status, iterations) = match e {
                        MpcError::Infeasible { iterations, .. } => (SolveStatus::Infeasible, iterations),
                        MpcError::MaxIterations { iterations } => (SolveStatus::MaxIterations, iterations),
                        _ => (SolveStatus::Error, 0),
                    };
                    let next = &preview.steps[0];
                    let target = desired_for_command(&cmd, stance.flipped(), &params, next)?.state;
                    let u = match deadbeat_one_step(&x0_pred, Vector2::new(target.l_x, target.l_y), &params, next) {
                        Ok(u) => clamp_to_inputs(u, ws, stance),
                        Err(err) => {
                            log.terminal = Some(Event {
                                kind: EventKind::FallbackUsed,
                                t,
                                sample: log.records.len(),
                                samples: 1,
                                detail: format!("fallback failed: {err}"),
                            });
                            break;
                        }
                    };
                    ControllerOutput {
                        u,
                        x0_pred,
                        status,
                        iterations,
                        solve_time,
                    }
                }
            };
        }

        let terrain = scenario.terrain_at(t);
        let (sx, sy) = bounds_ws
            .slip_bounds(&terrain)
            .map_err(|e| SimError::Invalid(format!("terrain at t={t}: {e}")))?;
        let record = LogRecord {
            t,
            step_index,
            stance,
            state: x,
            x0_pred: ctrl.x0_pred,
            k_x: terrain.k_x,
            k_y: terrain.k_y,
            mu_eff: terrain.mu * safety,
            vx_cmd: scenario.command_at(t).v_x_des,
            ufp: ctrl.u,
            slip_bound_x: sx,
            slip_bound_y: sy,
            qp_status: ctrl.status,
            qp_iters: ctrl.iterations,
            solve_time_s: ctrl.solve_time,
        };
        log.records.push(record);

        if scenario.plant.hard_fail && (x.x_c.abs() > sx + EVENT_TOL || x.y_c.abs() > sy + EVENT_TOL) {
            log.terminal = Some(Event {
                kind: EventKind::SlipViolation,
                t,
                sample: log.records.len() - 1,
                samples: 1,
                detail: "hard-fail: slip bound exceeded".into(),
            });
            break;
        }
        if tick == total {
            break;
        }

        let surface = scenario.believed_terrain_at(t);
        match plant.step(&x, t, &surface, &mismatch) {
            Ok(next) if next.is_finite() => x = next,
            Ok(_) | Err(_) => {
                log.terminal = Some(Event {
                    kind: EventKind::PlantFailure,
                    t,
                    sample: log.records.len() - 1,
                    samples: 1,
                    detail: "plant integration failed (singular or non-finite state)".into(),
                });
                break;
            }
        }
    }

    log.events = detect_events(&log.records, ws, EVENT_TOL);
    if let Some(ev) = &log.terminal {
        if !log.events.contains(ev) {
            log.events.push(ev.clone());
        }
    }
    Ok(log)
}
