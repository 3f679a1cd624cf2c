//! Error taxonomy of the command line: argument, file and numeric failures
//! map to distinct exit codes (2, 3 and 4).

use scatterpos_core::datagen::DataError;
use scatterpos_core::eval::EvalError;
use scatterpos_core::nn::NnError;
use scatterpos_core::physics::PhysicsError;
use scatterpos_core::train::TrainError;
use thiserror::Error;

pub const EXIT_ARGUMENT: i32 = 2;
pub const EXIT_FILE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("file error: {0}")]
    File(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Argument(_) => EXIT_ARGUMENT,
            Self::File(_) => EXIT_FILE,
            Self::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::File(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::File(e.to_string())
    }
}

impl From<PhysicsError> for CliError {
    fn from(e: PhysicsError) -> Self {
        match e {
            PhysicsError::Singularity { .. }
            | PhysicsError::NoSolution { .. }
            | PhysicsError::NonFiniteInput => Self::Numeric(e.to_string()),
            other => Self::Argument(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Physics(p) => p.into(),
            DataError::DriftCollapse { .. } => Self::Numeric(e.to_string()),
            other => Self::Argument(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Autodiff(a) => Self::Numeric(a.to_string()),
            other => Self::Argument(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => Self::Numeric(e.to_string()),
            TrainError::Nn(n) => n.into(),
            other => Self::Argument(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Physics(p) => p.into(),
            EvalError::Train(t) => t.into(),
            other => Self::Argument(other.to_string()),
        }
    }
}
