//! Experiment driver: configuration, run directories, manifests and the
//! commands behind the CLI.

pub mod config;
pub mod gradcheck;
pub mod run;

pub use config::RunConfig;
pub use gradcheck::{composite_gradcheck, GradCheckSummary};
pub use run::{cmd_ablate, cmd_eval, cmd_gradcheck, cmd_robustness, cmd_synth, cmd_train, CommandOutput};
