// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_STAGE: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;

/// A failed command with its exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub stage: Option<String>,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            stage: None,
            message: message.into(),
        }
    }

    pub fn stage(stage: &str, message: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_STAGE,
            stage: Some(stage.to_string()),
            message: message.to_string(),
        }
    }

    pub fn transport(stage: &str, message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_TRANSPORT,
            stage: Some(stage.to_string()),
            message: message.into(),
        }
    }

    /// Attaches a stage name unless one is already set.
    pub fn in_stage(mut self, stage: &str) -> Self {
        self.stage.get_or_insert_with(|| stage.to_string());
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(s) => write!(f, "error[{s}]: {}", self.message),
            None => write!(f, "error: {}", self.message),
        }
    }
}

/// Maps a library error to a stage failure.
pub trait StageResult<T> {
    fn stage(self, stage: &str) -> Result<T, Failure>;
}

impl<T> StageResult<T> for convoprobe::Result<T> {
    fn stage(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| match e {
            convoprobe::Error::Config(m) => Failure::validation(m).in_stage(stage),
            e => Failure::stage(stage, e),
        })
    }
}
