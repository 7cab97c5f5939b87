//! Config parsing, sweeps, and report files for the `sgprs-core` simulator.

pub mod calibrate;
pub mod config;
pub mod svg;
pub mod sweep;
pub mod trace;

pub use config::{
    emit_config, parse_config, parse_config_file, ConfigError, Scenario, SchedulerKind,
};
pub use sweep::{run_all, run_scenario, CsvRow, PivotRow, RunFlags};
