//! Configuration, persistence and the command-line entry point.

mod cli;
mod commands;
mod config;

pub use cli::{execute, run, Cli, Command};
pub use commands::{
    cmd_eval, cmd_generate, cmd_probe, cmd_train, cmd_verify, EvalSummary, ProbeRequest, Status, TrainReport,
};
pub use config::{ConfigLayer, ModelChoice, Paths, PathsLayer, Preset, RunConfig};
