//! Library half of the `person-search` binary: configuration, the commands,
//! and the pipeline glue they share.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::OutDir;
pub use config::RunConfig;
pub use error::CliError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;
