//! Declarative scenario runner for the rydion toolkit.

pub mod config;
pub mod output;
pub mod runner;
pub mod scenarios;
pub mod units;
