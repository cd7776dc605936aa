//! Command-line front end: space files, external objectives, trace files and
//! the `tune`, `bench`, `bounds` and `report` subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod external;
pub mod space;
pub mod tracefile;

use std::ffi::OsString;

use thiserror::Error;

pub use external::run_external_objective;
pub use space::{parse_space_file, Direction, ObjectiveSpec, SpaceError, SpaceFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// No evaluation of the run succeeded.
    #[error("{0}")]
    Evaluation(String),
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Evaluation(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl From<boss_core::Error> for CliError {
    fn from(e: boss_core::Error) -> Self {
        match e {
            boss_core::Error::DegenerateInstance(_) => CliError::Degenerate(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::Parser;
    let cli = match commands::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
