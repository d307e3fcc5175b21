//! Closed-loop scenario execution, event detection and logs.

mod events;
mod log;
mod run;
mod scenario;

use thiserror::Error;

use crate::alip::ModelError;
use crate::mpc::MpcError;

pub use events::{detect_events, Event, EventKind, EVENT_TOL};
pub use log::{read_log_csv, write_log_csv, ImpactRecord, LogRecord, SimLog, SolveStatus, CSV_COLUMNS};
pub use run::{run_closed_loop, run_closed_loop_with, RunOptions};
pub use scenario::{
    load_scenario, parse_scenario, ControllerSettings, Disturbance, PlantModel, PlantSettings, Scenario,
    TerrainModel, SCHEMA_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}
