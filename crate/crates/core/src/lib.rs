//! Staff-based vehicle relocation for free-floating car sharing.
//!
//! The crate covers the whole pipeline: hexagonal tessellation and zoning
//! of a service area, Poisson demand calibration, a discrete-time fleet
//! simulator, the ranking relocation policy and its integer-programming
//! counterpart, hyperparameter search, a synthetic city generator and the
//! benchmark harnesses built on top of them.

pub mod bench;
pub mod demand;
pub mod error;
pub mod hexgrid;
pub mod localmip;
pub mod predictors;
pub mod relocation;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod synthetic;
pub mod tuning;
pub mod zoning;

pub use error::{Error, Result};

/// Slot length in minutes.
pub const SLOT_MINUTES: f64 = 15.0;
/// Slots per day.
pub const SLOTS_PER_DAY: usize = 96;
