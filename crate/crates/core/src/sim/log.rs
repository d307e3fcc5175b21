//! Per-sample simulation records and their CSV form.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::events::Event;
use super::SimError;
use crate::alip::{AlipState, StanceSide};

/// Column order of the CSV log.
pub const CSV_COLUMNS: [&str; 22] = [
    "t",
    "step_index",
    "stance",
    "x_c",
    "y_c",
    "L_x",
    "L_y",
    "x0_pred_xc",
    "x0_pred_yc",
    "x0_pred_Lx",
    "x0_pred_Ly",
    "k_x",
    "k_y",
    "mu_eff",
    "vx_cmd",
    "ufp_x",
    "ufp_y",
    "slip_bound_x",
    "slip_bound_y",
    "qp_status",
    "qp_iters",
    "solve_time_s",
];

/// Controller outcome of the most recent solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    /// The planner rejected the problem before solving.
    Error,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "optimal" => SolveStatus::Optimal,
            "infeasible" => SolveStatus::Infeasible,
            "max-iterations" => SolveStatus::MaxIterations,
            "error" => SolveStatus::Error,
            _ => return None,
        })
    }

    /// Every non-optimal solve is replaced by the clamped deadbeat placement.
    pub fn used_fallback(self) -> bool {
        self != SolveStatus::Optimal
    }
}

/// One plant sample. At impact instants the state is the post-impact state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub step_index: u64,
    pub stance: StanceSide,
    pub state: AlipState,
    /// Controller's predicted pre-impact state for the current step.
    pub x0_pred: AlipState,
    /// Terrain under the plant.
    pub k_x: f64,
    pub k_y: f64,
    pub mu_eff: f64,
    pub vx_cmd: f64,
    /// Placement the next impact will use, as currently planned.
    pub ufp: Vector2<f64>,
    pub slip_bound_x: f64,
    pub slip_bound_y: f64,
    pub qp_status: SolveStatus,
    pub qp_iters: usize,
    pub solve_time_s: f64,
}

/// A completed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpactRecord {
    pub t: f64,
    /// Index of the step that just ended.
    pub step_index: u64,
    pub stance: StanceSide,
    pub pre: AlipState,
    pub post: AlipState,
    pub predicted_pre: AlipState,
    pub u: Vector2<f64>,
    /// World position of the new stance foot.
    pub foot_world: Vector2<f64>,
    /// World CoM position at the impact.
    pub com_world: Vector2<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SimLog {
    pub records: Vec<LogRecord>,
    pub impacts: Vec<ImpactRecord>,
    pub events: Vec<Event>,
    /// Set when the run stopped early.
    pub terminal: Option<Event>,
}

impl SimLog {
    /// Mean CoM velocity over the last `n_steps` completed steps.
    pub fn mean_velocity_last(&self, n_steps: usize, step_period: f64) -> Option<Vector2<f64>> {
        let n = self.impacts.len();
        if n_steps == 0 || n < n_steps + 1 {
            return None;
        }
        let a = self.impacts[n - 1 - n_steps].com_world;
        let b = self.impacts[n - 1].com_world;
        Some((b - a) / (n_steps as f64 * step_period))
    }

    /// World CoM positions at the impacts.
    pub fn com_track(&self) -> Vec<Vector2<f64>> {
        self.impacts.iter().map(|i| i.com_world).collect()
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_log_csv(records: &[LogRecord], path: impl AsRef<Path>) -> Result<(), SimError> {
    let path = path.as_ref();
    let io = |e: csv::Error| SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in records {
        let sigma = if r.stance == StanceSide::Left { "1" } else { "-1" };
        let row: [String; 22] = [
            fmt_f(r.t),
            r.step_index.to_string(),
            sigma.to_string(),
            fmt_f(r.state.x_c),
            fmt_f(r.state.y_c),
            fmt_f(r.state.l_x),
            fmt_f(r.state.l_y),
            fmt_f(r.x0_pred.x_c),
            fmt_f(r.x0_pred.y_c),
            fmt_f(r.x0_pred.l_x),
            fmt_f(r.x0_pred.l_y),
            fmt_f(r.k_x),
            fmt_f(r.k_y),
            fmt_f(r.mu_eff),
            fmt_f(r.vx_cmd),
            fmt_f(r.ufp.x),
            fmt_f(r.ufp.y),
            fmt_f(r.slip_bound_x),
            fmt_f(r.slip_bound_y),
            r.qp_status.as_str().to_string(),
            r.qp_iters.to_string(),
            fmt_f(r.solve_time_s),
        ];
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_log_csv(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, SimError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rd = csv::Reader::from_path(path).map_err(|e| SimError::Io {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    let header = rd.headers().map_err(|e| SimError::Parse(format!("{shown}: {e}")))?.clone();
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(SimError::Parse(format!("{shown}: unexpected header")));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Parse(format!("{shown}: {e}")))?;
        let bad = |col: &str| SimError::Parse(format!("{shown}: row {}: bad `{col}`", line + 1));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[i]));
        let stance = rec[2]
            .parse::<i32>()
            .ok()
            .and_then(StanceSide::from_sigma)
            .ok_or_else(|| bad("stance"))?;
        out.push(LogRecord {
            t: f(0)?,
            step_index: rec[1].parse().map_err(|_| bad("step_index"))?,
            stance,
            state: AlipState::new(f(3)?, f(4)?, f(5)?, f(6)?),
            x0_pred: AlipState::new(f(7)?, f(8)?, f(9)?, f(10)?),
            k_x: f(11)?,
            k_y: f(12)?,
            mu_eff: f(13)?,
            vx_cmd: f(14)?,
            ufp: Vector2::new(f(15)?, f(16)?),
            slip_bound_x: f(17)?,
            slip_bound_y: f(18)?,
            qp_status: SolveStatus::parse(&rec[19]).ok_or_else(|| bad("qp_status"))?,
            qp_iters: rec[20].parse().map_err(|_| bad("qp_iters"))?,
            solve_time_s: f(21)?,
        });
    }
    Ok(out)
}
