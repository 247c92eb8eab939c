//! Run configuration, command implementations and artifact emitters for the
//! `ridgewalk` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::Command;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Sizes the global rayon pool from `RIDGEWALK_THREADS` when it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("RIDGEWALK_THREADS") else {
        return Ok(());
    };
    let n = config::parse_threads(&value)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}
