//! Configuration, orchestration and file formats around `crossdiff-core`.
//!
//! A run directory holds `manifest.json` plus whatever the command wrote
//! (`trajectory.csv`, `diagnostics.json`, study tables, `plots/*.svg`); the
//! manifest lists every file with its SHA-256 digest.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

pub use commands::{
    cmd_check, cmd_equilibrium, cmd_refine_tau, cmd_run, cmd_sweep_m, CheckReport, CliError, Options, Outcome,
};
pub use config::{parse_config, parse_config_str, ConfigError, RunSpec, Setup};
