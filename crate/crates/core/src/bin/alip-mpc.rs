//! Command-line front end: closed-loop runs, single plans, gains and horizon
//! sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use alip_mpc::alip::{AlipState, StanceSide, TerrainPlane};
use alip_mpc::mpc::{step_to_step_pair, DareMode, FootPlanner, TerminalWeight};
use alip_mpc::sim::{
    load_scenario, run_closed_loop_with, write_log_csv, Event, EventKind, ImpactRecord, PlantModel, RunOptions,
    Scenario, SimLog,
};

#[derive(Parser)]
#[command(name = "alip-mpc", version, about = "ALIP MPC foot-placement planner and walking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write log.csv and summary.json into the output directory.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plant: Option<PlantModel>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Record wall-clock solve times (makes logs non-reproducible).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Solve one foot-placement problem and print the plan as JSON.
    Plan {
        /// Current state `x_c,y_c,L_x,L_y`.
        #[arg(long, value_parser = parse_state, allow_hyphen_values = true)]
        state: AlipState,
        /// Time left in the current step, seconds.
        #[arg(long)]
        remaining: f64,
        #[arg(long)]
        scenario: PathBuf,
        /// Stance of the current step; defaults to the scenario's initial stance.
        #[arg(long)]
        stance: Option<StanceArg>,
    },
    /// Print the step-to-step matrices and the terminal weight.
    Gains {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario once per horizon length.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        horizons: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StanceArg {
    Left,
    Right,
}

fn parse_state(s: &str) -> Result<AlipState, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, lx, ly] if v.iter().all(|a| a.is_finite()) => Ok(AlipState::new(x, y, lx, ly)),
        [_, _, _, _] => Err("state must be finite".into()),
        _ => Err(format!("expected 4 comma-separated values, got {}", v.len())),
    }
}

/// Failure category, mapped onto the exit code.
enum Failure {
    Usage(String),
    Terminal(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    horizon_steps: usize,
    steps_completed: usize,
    terminal: Option<&'a Event>,
    events: &'a [Event],
    impacts: &'a [ImpactRecord],
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_run(scenario: &Scenario, log: &SimLog, dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    write_log_csv(&log.records, dir.join("log.csv"))?;
    let summary = Summary {
        name: &scenario.name,
        horizon_steps: scenario.controller.mpc.horizon_steps,
        steps_completed: log.impacts.len(),
        terminal: log.terminal.as_ref(),
        events: &log.events,
        impacts: &log.impacts,
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&path, text + "\n").map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn count(log: &SimLog, kind: EventKind) -> usize {
    log.events.iter().filter(|e| e.kind == kind).count()
}

fn report(scenario: &Scenario, log: &SimLog) -> String {
    format!(
        "{} N_s={} steps={} slip={} mech={} infeasible={} fallback={}{}",
        scenario.name,
        scenario.controller.mpc.horizon_steps,
        log.impacts.len(),
        count(log, EventKind::SlipViolation),
        count(log, EventKind::MechViolation),
        count(log, EventKind::QpInfeasible),
        count(log, EventKind::FallbackUsed),
        log.terminal
            .as_ref()
            .map_or(String::new(), |e| format!(" terminal={} at t={:.3}", e.kind, e.t)),
    )
}

fn with_horizon(mut scenario: Scenario, n: usize) -> Result<Scenario, Failure> {
    if n == 0 {
        return Err(Failure::Usage("horizon must be at least 1".into()));
    }
    scenario.controller.mpc.horizon_steps = n;
    Ok(scenario)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            plant,
            horizon,
            wall_clock,
        } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(p) = plant {
                s.plant.model = p;
            }
            if let Some(n) = horizon {
                s = with_horizon(s, n)?;
            }
            let log = run_closed_loop_with(&s, &RunOptions { wall_clock })?;
            write_run(&s, &log, &out)?;
            println!("{}", report(&s, &log));
            if let Some(ev) = &log.terminal {
                return Err(Failure::Terminal(ev.detail.clone()));
            }
        }
        Command::Plan {
            state,
            remaining,
            scenario,
            stance,
        } => {
            let s = load_scenario(&scenario)?;
            let stance = match stance {
                None => s.initial_stance,
                Some(StanceArg::Left) => StanceSide::Left,
                Some(StanceArg::Right) => StanceSide::Right,
            };
            if !(remaining >= 0.0 && remaining <= s.robot.step_period) {
                return Err(Failure::Usage(format!(
                    "--remaining must lie in [0, {}], got {remaining}",
                    s.robot.step_period
                )));
            }
            let mut planner = FootPlanner::new(s.controller.mpc.clone())?;
            let preview = s.horizon_preview(0.0, 0);
            let plan = planner
                .plan(&state, remaining, &s.command_at(0.0), stance, &s.robot, &preview)
                .map_err(|e| Failure::Terminal(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&plan)?);
        }
        Command::Gains { scenario } => {
            #[derive(Serialize)]
            struct Gains {
                terrain: TerrainPlane,
                a_d: Vec<Vec<f64>>,
                b_d: Vec<Vec<f64>>,
                q_f: Vec<Vec<f64>>,
                dare_mode: Option<DareMode>,
                dare_iterations: Option<usize>,
                dare_residual: Option<f64>,
            }
            let s = load_scenario(&scenario)?;
            let preview = s.horizon_preview(0.0, 0);
            let terrain = *preview.steps.last().expect("horizon has at least one step");
            let (a_d, b_d) = step_to_step_pair(&s.robot, &terrain)?;
            let mpc = &s.controller.mpc;
            let (q_f, mode, sol) = match mpc.terminal {
                TerminalWeight::Fixed(_) => (mpc.fixed_terminal().expect("fixed weight"), None, None),
                TerminalWeight::Dare(mode) => {
                    let (p, sol) =
                        alip_mpc::mpc::dare_terminal_cost(&s.robot, &terrain, &mpc.q_step, mode, mpc.regularization)?;
                    (p, Some(mode), Some(sol))
                }
            };
            let g = Gains {
                terrain,
                a_d: rows(&a_d),
                b_d: rows(&b_d),
                q_f: rows(&DMatrix::from_column_slice(4, 4, q_f.as_slice())),
                dare_mode: mode,
                dare_iterations: sol.as_ref().map(|s| s.iterations),
                dare_residual: sol.as_ref().map(|s| s.residual),
            };
            println!("{}", serde_json::to_string_pretty(&g)?);
        }
        Command::Sweep { scenario, horizons, out } => {
            let base = load_scenario(&scenario)?;
            let mut terminal = Vec::new();
            for n in horizons {
                let s = with_horizon(base.clone(), n)?;
                let log = run_closed_loop_with(&s, &RunOptions::default())?;
                write_run(&s, &log, &out.join(format!("horizon_{n}")))?;
                println!("{}", report(&s, &log));
                if log.terminal.is_some() {
                    terminal.push(n.to_string());
                }
            }
            if !terminal.is_empty() {
                return Err(Failure::Terminal(format!(
                    "terminal event with horizon {}",
                    terminal.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Terminal(msg)) => {
            eprintln!("terminal: {msg}");
            ExitCode::from(2)
        }
    }
}
