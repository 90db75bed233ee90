//! Configuration and pipeline stages behind the `loadshed` command.

pub mod config;
pub mod run;

pub use config::RunConfig;
pub use run::Workspace;
