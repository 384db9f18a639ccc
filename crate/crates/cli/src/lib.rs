//! Library side of the `openintent` command: configuration, the command
//! implementations and the multi-model comparison runner.

pub mod ablate;
pub mod commands;
pub mod config;

use openintent_core::Error;

pub use ablate::{run_ablation, train_kind, AblationRow, AblationTable, ModelKind, Trained};
pub use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const INCOMPATIBLE: i32 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Report counters failed their consistency check.
    SelfCheck(String),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::SelfCheck(m) => write!(f, "self-check failed: {m}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                Error::Config { .. }
                | Error::Parse { .. }
                | Error::InvalidMap { .. }
                | Error::InvalidLane { .. }
                | Error::InvalidExit { .. }
                | Error::Infeasible(_)
                | Error::Label(_)
                | Error::UnknownId { .. }
                | Error::Empty(_) => exit::CONFIG,
                Error::Io { .. } => exit::IO,
                Error::Divergence(_) => exit::DIVERGENCE,
                Error::Incompatible(_) => exit::INCOMPATIBLE,
                _ => exit::FAILURE,
            },
            CliError::SelfCheck(_) => exit::FAILURE,
            CliError::Usage(_) => exit::CONFIG,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Stderr logger shared by the commands.
#[derive(Debug, Clone, Copy, Default)]
pub struct Log {
    pub verbose: bool,
}

impl Log {
    pub fn info(&self, msg: impl AsRef<str>) {
        eprintln!("{}", msg.as_ref());
    }

    pub fn debug(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}
