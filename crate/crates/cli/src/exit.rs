//! Process exit codes and the mapping from errors onto them.

use std::fmt;

use pathquant::Error;

pub const OK: u8 = 0;
pub const IO: u8 = 2;
pub const VALIDATION: u8 = 3;
pub const INTEGRATION: u8 = 4;
pub const RMQ: u8 = 5;

/// Error carrying the exit code it should produce.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(message: impl Into<String>) -> Self {
        Self { code: IO, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: VALIDATION, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn library_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => IO,
        Error::InvalidArgument(_)
        | Error::Validation(_)
        | Error::Parse { .. }
        | Error::Index(_)
        | Error::Unsupported(_)
        | Error::Domain { .. } => VALIDATION,
        Error::Blowup { .. } | Error::NonFinite { .. } | Error::LostWeight { .. } | Error::Convergence { .. } => INTEGRATION,
        Error::DegenerateGrid { .. } => RMQ,
    }
}

/// First recognizable cause in the chain decides the code; anything else is
/// treated as an i/o problem.
pub fn code_of(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return library_code(e);
        }
    }
    IO
}
