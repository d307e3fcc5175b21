//! ALIP foot-placement MPC and a reduced-order walking simulator.
//!
//! The crate is organised bottom-up: [`alip`] holds the linear model and the
//! exact CoM dynamics used as a plant, [`reference`] the periodic targets,
//! [`constraints`] the workspace and slip limits, [`mpc`] the condensed QP and
//! its solver, [`swing`] the kinematic swing references and [`sim`] the closed
//! loop with its scenario and log formats.

pub mod alip;
pub mod constraints;
pub mod mpc;
pub mod reference;
pub mod swing;
pub mod sim;
