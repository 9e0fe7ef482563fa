//! Simulation and fitting toolkit for trapped Rydberg ions in linear Paul traps.

pub mod constants;
pub mod numerics;
pub mod crystal;
pub mod dynamics;
pub mod spectra;
pub mod trap;
pub mod rydstate;
pub mod interactions;

/// Library version recorded in run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
