//! Hybrid rigid-body dynamics simulator and controller testbed for a
//! gantry-mounted hopping leg.
//!
//! The plant is a 4-DoF serial chain: a passive rotating gantry (yaw `th1`,
//! pitch `th2`) carrying a 2-DoF leg (hip `th3`, knee `th4`) driven by
//! voltage-commanded geared DC motors with a parallel knee spring. Flight and
//! stance phases are stitched together by touchdown/liftoff events; stance is
//! modeled as a bilateral no-slip point contact, touchdown as an inelastic
//! impulsive impact.
//!
//! Module map:
//! - [`model`]: parameters, state, validation
//! - [`kinematics`]: frames, forward kinematics, Jacobians, contact frame
//! - [`dynamics`]: mass matrix / Coriolis / gravity, flight and stance
//!   dynamics, impact map
//! - [`actuation`]: motor voltage/torque maps and the torque-speed envelope
//! - [`control`]: 1 kHz hopping controller (aerial PD, stance force profile,
//!   blending, filtered derivatives, sensor model)
//! - [`integrator`]: embedded Runge-Kutta with dense output and root finding
//! - [`sim`]: hybrid event loop, trace recording, run metrics
//! - [`config`]: TOML configuration load/save/validate
//! - [`trace_csv`]: deterministic CSV export/import of traces
//! - [`plot`]: SVG plot rendering
//! - [`cli`]: command-line entry points

pub mod actuation;
pub mod cli;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod integrator;
pub mod kinematics;
pub mod model;
pub mod plot;
pub mod sim;
pub mod trace_csv;

pub use model::{ContactFrame, Phase, RobotModel, SystemState};
