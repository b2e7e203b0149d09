//! Configuration, persistence, black-box subprocesses and verbs behind the `pesc` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod external;
pub mod record;
pub mod state;

pub use error::{CliError, EvalError};
