//! Training engine: losses, metrics, the threshold scheduler, Adam, the
//! epoch loop, and run reporting.

mod adam;
mod loss;
mod metrics;
mod report;
mod sapt;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{bce_loss, fni_fpi, pwl_loss, DeltaSource, PwlBreakdown, PwlConfig};
pub use metrics::{compute_metrics, confusion_at, ConfusionCounts, Metrics};
pub use report::{write_curves, write_line_chart_svg, write_report_csv, MetricsDocument};
pub use sapt::{default_grid, SaptSettings, ThresholdScheduler};
pub use trainer::{
    recording_level_summary, score_clips, train, ClipSample, EpochRow, EvalSummary, LossKind,
    Thresholding, TrainReport, TrainSettings,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty {0} split")]
    EmptyDataset(&'static str),
    #[error("validation set contains a single class; F1 is undefined across the threshold grid")]
    SingleClassValidation,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (op {op})")]
    NaNLoss { epoch: u32, batch: usize, op: String },
    #[error("model: {0}")]
    Model(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AdError),
}

impl From<crate::model::ModelError> for TrainError {
    fn from(e: crate::model::ModelError) -> Self {
        match e {
            crate::model::ModelError::Autodiff(ad) => TrainError::Autodiff(ad),
            other => TrainError::Model(other.to_string()),
        }
    }
}
