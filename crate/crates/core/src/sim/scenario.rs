//! Scenario files: TOML with a strict schema, validated on load.

use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::alip::{AlipState, RobotParams, StanceSide, TerrainPlane};
use crate::constraints::{Interval, WorkspaceConfig};
use crate::mpc::{DareMode, HorizonTerrain, MpcConfig, TerminalWeight};
use crate::reference::{lateral_velocity_to_offset, orbit_start_state, GaitCommand};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantModel {
    Alip,
    /// Exact CoM dynamics on the terrain plane (pre-impact form).
    #[serde(alias = "exact-pre")]
    Exact,
}

impl std::str::FromStr for PlantModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alip" => Ok(PlantModel::Alip),
            "exact" | "exact-pre" => Ok(PlantModel::Exact),
            other => Err(format!("unknown plant `{other}` (expected alip or exact)")),
        }
    }
}

/// What the controller believes about the ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainModel {
    Aware,
    /// Slopes hidden from the controller; friction and height still known.
    Flat,
}

/// `L_c = A sin(2 pi f t + phi)` about x and y, phases drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub mpc: MpcConfig,
    pub period: f64,
    pub terrain_model: TerrainModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSettings {
    pub model: PlantModel,
    pub step: f64,
    pub disturbance: Option<Disturbance>,
    /// Stop at the first slip violation.
    pub hard_fail: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub schema_version: u32,
    pub robot: RobotParams,
    pub terrain: Vec<(f64, TerrainPlane)>,
    pub commands: Vec<(f64, GaitCommand)>,
    pub controller: ControllerSettings,
    pub plant: PlantSettings,
    pub duration: f64,
    /// Post-impact state at `t = 0` in the initial stance frame.
    pub initial_state: AlipState,
    pub initial_stance: StanceSide,
    pub seed: u64,
}

impl Scenario {
    pub fn terrain_at(&self, t: f64) -> TerrainPlane {
        active(&self.terrain, t)
    }

    pub fn command_at(&self, t: f64) -> GaitCommand {
        active(&self.commands, t)
    }

    /// Terrain as the controller sees it.
    pub fn believed_terrain_at(&self, t: f64) -> TerrainPlane {
        let terrain = self.terrain_at(t);
        match self.controller.terrain_model {
            TerrainModel::Aware => terrain,
            TerrainModel::Flat => terrain.flattened(),
        }
    }

    /// Controller terrain for the rest of step `step_index` (at time `t`)
    /// and for each horizon step, read at that step's start time.
    pub fn horizon_preview(&self, t: f64, step_index: u64) -> HorizonTerrain {
        let period = self.robot.step_period;
        HorizonTerrain {
            current: self.believed_terrain_at(t),
            steps: (0..self.controller.mpc.horizon_steps as u64)
                .map(|j| self.believed_terrain_at((step_index + 1 + j) as f64 * period))
                .collect(),
        }
    }

    pub fn n_steps(&self) -> u64 {
        (self.duration / self.robot.step_period).round() as u64
    }

    /// Ticks per step, per controller period and in total.
    pub fn tick_counts(&self) -> (u64, u64, u64) {
        let h = self.plant.step;
        let per_step = (self.robot.step_period / h).round() as u64;
        let per_ctrl = (self.controller.period / h).round() as u64;
        (per_step, per_ctrl, per_step * self.n_steps())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Invalid(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.robot.validate()?;
        check_schedule("terrain", &self.terrain)?;
        check_schedule("command", &self.commands)?;
        self.controller.mpc.validate()?;
        let ws = self.controller.mpc.workspace.unwrap_or_default();
        for (t, terrain) in &self.terrain {
            terrain.validate()?;
            ws.slip_bounds(terrain)
                .map_err(|e| SimError::Invalid(format!("terrain at t={t}: {e}")))?;
        }
        for (_, cmd) in &self.commands {
            cmd.validate()?;
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !is_multiple(self.duration, self.robot.step_period) {
            return bad(format!(
                "duration {} is not a multiple of the step period {}",
                self.duration, self.robot.step_period
            ));
        }
        let h = self.plant.step;
        if !(h.is_finite() && h > 0.0) {
            return bad(format!("plant step must be positive, got {h}"));
        }
        if !is_multiple(self.robot.step_period, h) {
            return bad(format!("step period is not a multiple of the plant step {h}"));
        }
        if !(self.controller.period > 0.0 && is_multiple(self.controller.period, h)) {
            return bad(format!(
                "controller period {} is not a positive multiple of the plant step {h}",
                self.controller.period
            ));
        }
        if !is_multiple(self.robot.step_period, self.controller.period) {
            return bad("step period is not a multiple of the controller period".into());
        }
        if let Some(d) = self.plant.disturbance {
            if !(d.amplitude.is_finite() && d.amplitude >= 0.0 && d.frequency.is_finite() && d.frequency >= 0.0) {
                return bad("disturbance amplitude and frequency must be finite and >= 0".into());
            }
        }
        if !self.initial_state.is_finite() {
            return bad("initial state is not finite".into());
        }
        Ok(())
    }
}

fn active<T: Copy>(schedule: &[(f64, T)], t: f64) -> T {
    // entries take effect at their start time, up to tick rounding
    let idx = schedule.partition_point(|(start, _)| *start <= t + 1e-9);
    schedule[idx.max(1) - 1].1
}

fn is_multiple(a: f64, b: f64) -> bool {
    let r = a / b;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

fn check_schedule<T>(what: &str, schedule: &[(f64, T)]) -> Result<(), SimError> {
    match schedule.first() {
        None => return Err(SimError::Invalid(format!("{what} schedule is empty"))),
        Some((t, _)) if *t != 0.0 => {
            return Err(SimError::Invalid(format!("{what} schedule must start at t=0, starts at {t}")))
        }
        _ => {}
    }
    for w in schedule.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(SimError::Invalid(format!(
                "{what} schedule is not sorted by t_start ({} then {})",
                w[0].0, w[1].0
            )));
        }
    }
    Ok(())
}

// ---- file schema ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_schema")]
    schema_version: u32,
    #[serde(default)]
    name: Option<String>,
    duration: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    robot: RobotFile,
    #[serde(default)]
    terrain: Vec<TerrainEntry>,
    #[serde(default)]
    command: Vec<CommandEntry>,
    #[serde(default)]
    controller: ControllerFile,
    #[serde(default)]
    plant: PlantFile,
    #[serde(default)]
    initial: InitialFile,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RobotFile {
    mass: f64,
    gravity: f64,
    step_period: f64,
    step_width: f64,
}

impl Default for RobotFile {
    fn default() -> Self {
        let r = RobotParams::default();
        Self {
            mass: r.mass,
            gravity: r.gravity,
            step_period: r.step_period,
            step_width: r.step_width,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerrainEntry {
    t_start: f64,
    #[serde(default)]
    k_x: Option<f64>,
    #[serde(default)]
    k_y: Option<f64>,
    /// Slope angles in degrees, alternative to `k_x` / `k_y`.
    #[serde(default)]
    slope_x_deg: Option<f64>,
    #[serde(default)]
    slope_y_deg: Option<f64>,
    #[serde(default = "default_mu")]
    mu: f64,
    #[serde(default = "default_z_h")]
    z_h: f64,
}

fn default_mu() -> f64 {
    TerrainPlane::default().mu
}

fn default_z_h() -> f64 {
    TerrainPlane::default().z_h
}

impl TerrainEntry {
    fn to_plane(&self) -> Result<TerrainPlane, SimError> {
        let slope = |k: Option<f64>, deg: Option<f64>, axis: &str| match (k, deg) {
            (Some(_), Some(_)) => Err(SimError::Invalid(format!(
                "terrain at t={}: give either k_{axis} or slope_{axis}_deg, not both",
                self.t_start
            ))),
            (Some(k), None) => Ok(k),
            (None, Some(d)) => Ok(d.to_radians().tan()),
            (None, None) => Ok(0.0),
        };
        Ok(TerrainPlane {
            k_x: slope(self.k_x, self.slope_x_deg, "x")?,
            k_y: slope(self.k_y, self.slope_y_deg, "y")?,
            mu: self.mu,
            z_h: self.z_h,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandEntry {
    t_start: f64,
    #[serde(default)]
    v_x: f64,
    /// Lateral velocity, mapped onto an `L_x` offset.
    #[serde(default)]
    v_y: f64,
    #[serde(default)]
    lx_offset: f64,
    #[serde(default)]
    delta_psi: f64,
    #[serde(default)]
    step_width: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
enum TerminalFile {
    DareOneStep,
    DareTwoStepLifted,
    Fixed,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ControllerFile {
    horizon_steps: usize,
    samples_per_step: usize,
    period: f64,
    q_step: [f64; 4],
    terminal: TerminalFile,
    /// Diagonal of a fixed terminal weight.
    terminal_weight: Option<[f64; 4]>,
    regularization: f64,
    terrain_model: TerrainModel,
    constraints: bool,
    constrain_post_impact: bool,
    workspace: WorkspaceFile,
}

impl Default for ControllerFile {
    fn default() -> Self {
        let m = MpcConfig::default();
        Self {
            horizon_steps: m.horizon_steps,
            samples_per_step: m.samples_per_step,
            period: 0.004,
            q_step: [m.q_step[(0, 0)], m.q_step[(1, 1)], m.q_step[(2, 2)], m.q_step[(3, 3)]],
            terminal: TerminalFile::DareOneStep,
            terminal_weight: None,
            regularization: m.regularization,
            terrain_model: TerrainModel::Aware,
            constraints: true,
            constrain_post_impact: false,
            workspace: WorkspaceFile::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct WorkspaceFile {
    x_c: [f64; 2],
    y_c_left: [f64; 2],
    u_x: [f64; 2],
    u_y_left: [f64; 2],
    mu_safety_factor: f64,
}

impl Default for WorkspaceFile {
    fn default() -> Self {
        let w = WorkspaceConfig::default();
        let pair = |i: Interval| [i.lower, i.upper];
        Self {
            x_c: pair(w.x_c),
            y_c_left: pair(w.y_c_left),
            u_x: pair(w.u_x),
            u_y_left: pair(w.u_y_left),
            mu_safety_factor: w.mu_safety_factor,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PlantFile {
    model: PlantModel,
    step: f64,
    disturbance: Option<Disturbance>,
    hard_fail: bool,
}

impl Default for PlantFile {
    fn default() -> Self {
        Self {
            model: PlantModel::Alip,
            step: 0.001,
            disturbance: None,
            hard_fail: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InitialFile {
    stance: StanceSide,
    /// `[x_c, y_c, L_x, L_y]`; defaults to the periodic orbit of the first
    /// command.
    state: Option<[f64; 4]>,
}

impl Default for InitialFile {
    fn default() -> Self {
        Self {
            stance: StanceSide::Left,
            state: None,
        }
    }
}

fn diag(d: [f64; 4]) -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::from(d))
}

/// Parse and validate scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, SimError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
    let robot = RobotParams {
        mass: file.robot.mass,
        gravity: file.robot.gravity,
        step_period: file.robot.step_period,
        step_width: file.robot.step_width,
    };

    let terrain: Vec<(f64, TerrainPlane)> = if file.terrain.is_empty() {
        vec![(0.0, TerrainPlane::default())]
    } else {
        file.terrain
            .iter()
            .map(|e| Ok((e.t_start, e.to_plane()?)))
            .collect::<Result<_, SimError>>()?
    };

    let commands: Vec<(f64, GaitCommand)> = if file.command.is_empty() {
        vec![(0.0, GaitCommand::forward(0.0, robot.step_width))]
    } else {
        file.command
            .iter()
            .map(|c| {
                let at = active(&terrain, c.t_start);
                let lateral = lateral_velocity_to_offset(c.v_y, &robot, &at);
                (
                    c.t_start,
                    GaitCommand {
                        v_x_des: c.v_x,
                        lx_offset: c.lx_offset + lateral,
                        delta_psi: c.delta_psi,
                        step_width: c.step_width.unwrap_or(robot.step_width),
                    },
                )
            })
            .collect()
    };

    let cf = &file.controller;
    let terminal = match cf.terminal {
        TerminalFile::DareOneStep => TerminalWeight::Dare(DareMode::OneStep),
        TerminalFile::DareTwoStepLifted => TerminalWeight::Dare(DareMode::TwoStepLifted),
        TerminalFile::Fixed => {
            let d = cf
                .terminal_weight
                .ok_or_else(|| SimError::Invalid("terminal = \"fixed\" needs terminal_weight".into()))?;
            TerminalWeight::fixed(&diag(d))
        }
    };
    if cf.terminal_weight.is_some() && !matches!(cf.terminal, TerminalFile::Fixed) {
        return Err(SimError::Invalid("terminal_weight is only used with terminal = \"fixed\"".into()));
    }
    let wf = &cf.workspace;
    let iv = |p: [f64; 2]| Interval::new(p[0], p[1]);
    let workspace = WorkspaceConfig {
        x_c: iv(wf.x_c),
        y_c_left: iv(wf.y_c_left),
        u_x: iv(wf.u_x),
        u_y_left: iv(wf.u_y_left),
        mu_safety_factor: wf.mu_safety_factor,
    };
    let mpc = MpcConfig {
        horizon_steps: cf.horizon_steps,
        samples_per_step: cf.samples_per_step,
        q_step: diag(cf.q_step),
        terminal,
        workspace: cf.constraints.then_some(workspace),
        regularization: cf.regularization,
        constrain_post_impact: cf.constrain_post_impact,
    };

    let initial_state = match file.initial.state {
        Some(s) => AlipState::new(s[0], s[1], s[2], s[3]),
        None => orbit_start_state(&commands[0].1, file.initial.stance, &robot, &terrain[0].1)?,
    };

    let scenario = Scenario {
        name: file.name.unwrap_or_else(|| "scenario".into()),
        schema_version: file.schema_version,
        robot,
        terrain,
        commands,
        controller: ControllerSettings {
            mpc,
            period: cf.period,
            terrain_model: cf.terrain_model,
        },
        plant: PlantSettings {
            model: file.plant.model,
            step: file.plant.step,
            disturbance: file.plant.disturbance,
            hard_fail: file.plant.hard_fail,
        },
        duration: file.duration,
        initial_state,
        initial_stance: file.initial.stance,
        seed: file.seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        message: source.to_string(),
    })?;
    parse_scenario(&text).map_err(|e| match e {
        SimError::Parse(msg) => SimError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
