//! Pipeline behind the `perturblab` command: a JSON run configuration,
//! a run directory with a manifest, and one function per subcommand.

pub mod config;
pub mod error;
pub mod stages;
pub mod workspace;

pub use config::RunConfig;
pub use error::{CliError, ErrorKind};
pub use stages::{execute, Command};
