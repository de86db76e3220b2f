//! Library surface of the `acctl` driver: config parsing, deterministic
//! serialization, and the subcommand runners. The binary in `main.rs` is a
//! thin argument-parsing shell over [`runner::run`].

pub mod config;
pub mod error;
pub mod io;
pub mod runner;

pub use config::{parse_config, RunConfig};
pub use error::CliError;
pub use runner::{run, RunContext, SubcommandKind};
