//! Scenario files, runs, trajectory CSV, reports and plots on top of
//! `flownet-core`.

pub mod config;
pub mod error;
pub mod fourjunction;
pub mod plot;
pub mod run;
pub mod table;
pub mod tracker;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use run::{run_many, run_scenario, write_outputs, RunSummary, ScenarioRun};
