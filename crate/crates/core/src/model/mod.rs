//! The classifier: stacked convolutional blocks feeding a recurrent cell
//! (standard LSTM or the H∞-gated variant) and a sigmoid head, plus the
//! fine-tuning transfer/freeze protocol.

mod blocks;
mod lstm;
mod network;

pub use blocks::conv_block_forward;
pub use lstm::{hinf_lstm_step, standard_lstm_step, CellState, LstmGateVars};
pub use network::{transfer_and_freeze, Model};

use crate::autodiff::{AdError, CheckpointError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellMode {
    Standard,
    HInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// One robustness coefficient shared by every hidden unit.
    Scalar,
    /// One coefficient per hidden unit.
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output channels of each convolutional block.
    pub conv_blocks: Vec<usize>,
    pub hidden_size: usize,
    pub cell_mode: CellMode,
    pub lambda_mode: LambdaMode,
    /// Expected input grid, rows (mel bands) by columns (frames).
    pub n_mels: usize,
    pub n_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_blocks: vec![16, 32, 64],
            hidden_size: 128,
            cell_mode: CellMode::HInfinity,
            lambda_mode: LambdaMode::Scalar,
            n_mels: 64,
            n_frames: 38,
        }
    }
}

/// Construction-time account of every intermediate shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub input: (usize, usize),
    /// Input after right/bottom zero padding to a multiple of `2^blocks`.
    pub padded: (usize, usize),
    /// `(channels, height, width)` after each block.
    pub block_outputs: Vec<(usize, usize, usize)>,
    pub seq_len: usize,
    pub step_dim: usize,
}

fn round_up(v: usize, multiple: usize) -> usize {
    v.div_ceil(multiple) * multiple
}

impl ModelConfig {
    /// Resolve the full shape pipeline; every config/shape inconsistency
    /// surfaces here, at construction, not mid-forward.
    pub fn shape_report(&self) -> Result<ShapeReport, ModelError> {
        if self.conv_blocks.is_empty() {
            return Err(ModelError::Config("conv_blocks must not be empty".into()));
        }
        if self.conv_blocks.iter().any(|&c| c == 0) || self.hidden_size == 0 {
            return Err(ModelError::Config(
                "channel counts and hidden size must be positive".into(),
            ));
        }
        if self.n_mels == 0 || self.n_frames == 0 {
            return Err(ModelError::Config("input grid must be non-empty".into()));
        }
        let reduction = 1usize << self.conv_blocks.len();
        let padded = (
            round_up(self.n_mels, reduction),
            round_up(self.n_frames, reduction),
        );
        let mut block_outputs = Vec::with_capacity(self.conv_blocks.len());
        let (mut h, mut w) = padded;
        for &c in &self.conv_blocks {
            h /= 2;
            w /= 2;
            block_outputs.push((c, h, w));
        }
        let (c_last, h_last, w_last) = *block_outputs.last().expect("non-empty");
        Ok(ShapeReport {
            input: (self.n_mels, self.n_frames),
            padded,
            block_outputs,
            seq_len: w_last,
            step_dim: c_last * h_last,
        })
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("input batch: {0}")]
    Input(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
