//! Configuration, checkpoints, CSV series, presets and the subcommand drivers.

pub mod checkpoint;
pub mod config;
pub mod presets;
pub mod runner;
pub mod series;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use runner::{cmd_gradcheck, cmd_refine_study, cmd_resume, cmd_run, run_config, RunOptions, RunSummary};
