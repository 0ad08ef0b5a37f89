//! Command-line front end: configuration, the dataset-preparation
//! pipeline, and the `synth` / `preprocess` / `train` / `evaluate`
//! commands. The binary in `main.rs` is a thin argument parser over these
//! functions.

mod commands;
mod config;
mod pipeline;

pub use commands::{
    cmd_evaluate, cmd_preprocess, cmd_synth, cmd_train, CheckpointMeta, PreprocessRow, TrainOutputs,
};
pub use config::{DataConfig, DataSource, PreprocessConfig, RunConfig, SplitConfig};
pub use pipeline::{
    acquire_records, prepare_all_as_test, prepare_dataset, prepare_with_manifest, PreparedDataset,
};

use thiserror::Error;

/// Exit codes: 0 success, 2 input/layout, 3 validation/data degeneracy,
/// 1 internal faults.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<crate::data::DataError> for CliError {
    fn from(e: crate::data::DataError) -> Self {
        use crate::data::DataError as D;
        match &e {
            D::Io { .. } | D::Wav { .. } | D::Reference { .. } | D::Layout(_) => {
                CliError::Input(e.to_string())
            }
            D::Split(_) | D::InvalidSpec(_) | D::Empty(_) | D::Manifest(_) | D::Mel(_)
            | D::Dsp(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<crate::mel::MelError> for CliError {
    fn from(e: crate::mel::MelError) -> Self {
        match &e {
            crate::mel::MelError::Io(_) => CliError::Input(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        match &e {
            crate::model::ModelError::Autodiff(_) => CliError::Internal(e.to_string()),
            crate::model::ModelError::Checkpoint(c) => match c {
                crate::autodiff::CheckpointError::Io(_) => CliError::Input(e.to_string()),
                _ => CliError::Validation(e.to_string()),
            },
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<crate::autodiff::CheckpointError> for CliError {
    fn from(e: crate::autodiff::CheckpointError) -> Self {
        match &e {
            crate::autodiff::CheckpointError::Io(_) => CliError::Input(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<crate::train::TrainError> for CliError {
    fn from(e: crate::train::TrainError) -> Self {
        use crate::train::TrainError as T;
        match &e {
            T::Config(_) | T::EmptyBatch | T::EmptyDataset(_) | T::SingleClassValidation => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}
