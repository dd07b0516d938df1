//! Command implementations behind the `cimle` binary.
//!
//! Every command is a plain function from arguments to files on disk, so the
//! same code paths are exercised by the binary and by tests. Exit codes:
//! 0 success, 1 I/O failure, 2 bad configuration or input, 3 training
//! divergence, 4 corrupt checkpoint or dataset.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_eval, cmd_gen_data, cmd_interpolate, cmd_rebalance_stats, cmd_sample, cmd_train, EvalArgs, InterpolateArgs,
    SampleArgs, TrainArgs, TrainSummary,
};
pub use config::{ConfigError, ExperimentConfig, Task};
pub use error::CliError;
