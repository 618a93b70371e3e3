//! Error-to-exit-code policy: 2 for usage/config problems, 3 for data
//! problems (missing or malformed inputs), 4 for numerical failures.

use sica_core::dre::DreError;
use sica_core::eval::EvalError;
use sica_core::ndgrad::CheckpointError;
use sica_core::rectflow::RfError;
use sica_core::sica::{FlowError, SicaError};
use sica_core::signals::SignalError;
use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match &e {
            SignalError::InvalidConfig(_) | SignalError::MaskOutOfRange { .. } => {
                CliError::Usage(e.to_string())
            }
            SignalError::Unstable { .. } | SignalError::RankDeficient { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::DimMismatch { .. } => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SicaError> for CliError {
    fn from(e: SicaError) -> Self {
        match e {
            SicaError::InvalidConfig(_) | SicaError::ShapeMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            SicaError::Signal(inner) => inner.into(),
            SicaError::Eval(inner) => inner.into(),
            SicaError::Checkpoint(inner) => inner.into(),
            SicaError::Manifest(m) => CliError::Data(m),
            SicaError::FlowTraining { .. } | SicaError::NonFinite { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<DreError> for CliError {
    fn from(e: DreError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<RfError> for CliError {
    fn from(e: RfError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
