use std::fmt;

use ventmode::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn model(message: impl Into<String>) -> Self {
        Self { code: EXIT_MODEL, message: message.into() }
    }

    /// Prefix the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::IncompatibleModel { .. }
        | Error::ModelFormat(_)
        | Error::InvalidConfig(_)
        | Error::UntrainableLabel(_)
        | Error::NotEnoughGroups { .. }
        | Error::Json(_) => EXIT_MODEL,
        Error::Parse { .. }
        | Error::Structural(_)
        | Error::Schema(_)
        | Error::DuplicateAnnotation { .. }
        | Error::Join { .. }
        | Error::DegenerateBreath { .. }
        | Error::EmptyTrainingSet
        | Error::NonFinite { .. }
        | Error::UnknownPatient(_)
        | Error::EmptyConfusion
        | Error::OtherLabel
        | Error::InvalidVotes { .. }
        | Error::Io(_)
        | Error::Csv(_) => EXIT_DATA,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self { code: EXIT_DATA, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
