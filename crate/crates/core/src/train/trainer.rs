//! The epoch loop: shuffled mini-batches through the model, penalty-
//! weighted (or plain BCE) loss, Adam updates, per-epoch validation
//! scoring, threshold scheduling, and the final test evaluation at both
//! clip and recording level.

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{bce_loss, pwl_loss, DeltaSource, PwlConfig};
use super::metrics::{compute_metrics, confusion_at, ConfusionCounts, Metrics};
use super::sapt::{SaptSettings, ThresholdScheduler};
use super::TrainError;
use crate::autodiff::{AdError, Tape, Tensor};
use crate::data::{aggregate_recording, AggregateMode, Split};
use crate::mel::MelSpectrogram;
use crate::model::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One spectrogram with its dataset identity, ready for training.
#[derive(Debug, Clone)]
pub struct ClipSample {
    pub record_id: String,
    pub patient_id: String,
    pub label: u8,
    pub split: Split,
    pub mel: MelSpectrogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Pwl,
    Bce,
}

/// Decision-threshold policy for validation metrics, the PWL delta (when
/// tracking) and the final test evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholding {
    Sapt(SaptSettings),
    Fixed(f64),
}

impl Default for Thresholding {
    fn default() -> Self {
        Thresholding::Sapt(SaptSettings::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub pwl: PwlConfig,
    pub thresholding: Thresholding,
    pub aggregate: AggregateMode,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 50,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossKind::Pwl,
            pwl: PwlConfig::default(),
            thresholding: Thresholding::default(),
            aggregate: AggregateMode::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_acc: f64,
    pub val_sens: f64,
    pub val_spec: f64,
    /// Threshold in effect for this epoch's classification.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRow>,
    pub final_tau: f64,
    pub test_clip: EvalSummary,
    pub test_recording: EvalSummary,
    pub frozen_params: Vec<String>,
}

impl TrainReport {
    pub fn final_val_f1(&self) -> f64 {
        self.epochs.last().map(|r| r.val_f1).unwrap_or(0.0)
    }
}

fn wrap_nan(err: AdError, epoch: u32, batch: usize) -> TrainError {
    match err {
        AdError::NonFinite { op } => TrainError::NaNLoss {
            epoch,
            batch,
            op: op.to_string(),
        },
        other => TrainError::Autodiff(other),
    }
}

/// Score clips in deterministic order with eval-mode batch norm.
pub fn score_clips(
    model: &mut Model,
    clips: &[&ClipSample],
    batch_size: usize,
) -> Result<Vec<f64>, TrainError> {
    let mels: Vec<&MelSpectrogram> = clips.iter().map(|c| &c.mel).collect();
    model.score(&mels, batch_size).map_err(TrainError::from)
}

/// Full training run over a prepared clip set whose split assignment was
/// already fixed by the data layer.
pub fn train(
    model: &mut Model,
    clips: &[ClipSample],
    settings: &TrainSettings,
) -> Result<TrainReport, TrainError> {
    settings.pwl.validate()?;
    if settings.batch_size == 0 || settings.epochs == 0 {
        return Err(TrainError::Config("epochs and batch size must be positive".into()));
    }
    let train_idx: Vec<usize> = (0..clips.len())
        .filter(|&i| clips[i].split == Split::Train)
        .collect();
    let val: Vec<&ClipSample> = clips.iter().filter(|c| c.split == Split::Val).collect();
    let test: Vec<&ClipSample> = clips.iter().filter(|c| c.split == Split::Test).collect();
    for (name, n) in [("train", train_idx.len()), ("val", val.len()), ("test", test.len())] {
        if n == 0 {
            return Err(TrainError::EmptyDataset(name));
        }
    }
    let val_labels: Vec<u8> = val.iter().map(|c| c.label).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut adam = AdamState::new(settings.adam);
    let mut scheduler = match &settings.thresholding {
        Thresholding::Sapt(s) => Some(ThresholdScheduler::new(super::sapt::default_grid(), s.clone())?),
        Thresholding::Fixed(tau) => {
            if !(0.0..=1.0).contains(tau) {
                return Err(TrainError::Config(format!("fixed tau {tau} out of [0, 1]")));
            }
            None
        }
    };
    let fixed_tau = match &settings.thresholding {
        Thresholding::Fixed(tau) => *tau,
        _ => 0.5,
    };

    let mut rows: Vec<EpochRow> = Vec::with_capacity(settings.epochs as usize);
    let mut order = train_idx.clone();
    for epoch in 1..=settings.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let tau_active = scheduler.as_ref().map(|s| s.current_tau).unwrap_or(fixed_tau);
        let delta = match (settings.loss, settings.pwl.delta_source) {
            (LossKind::Pwl, DeltaSource::TrackSapt) => tau_active,
            (LossKind::Pwl, DeltaSource::Fixed(d)) => d,
            (LossKind::Bce, _) => 0.5,
        };
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_no, chunk) in order.chunks(settings.batch_size).enumerate() {
            let mels: Vec<&MelSpectrogram> = chunk.iter().map(|&i| &clips[i].mel).collect();
            let labels: Vec<f64> = chunk.iter().map(|&i| clips[i].label as f64).collect();
            let input = model.input_tensor(&mels)?;
            let mut tape = Tape::new();
            let (probs, bound) = model
                .forward(&mut tape, &input, true)
                .map_err(|e| match e {
                    crate::model::ModelError::Autodiff(ad) => wrap_nan(ad, epoch, batch_no),
                    other => TrainError::Model(other.to_string()),
                })?;
            let loss = match settings.loss {
                LossKind::Pwl => pwl_loss(&mut tape, probs, &labels, &settings.pwl, delta)?.0,
                LossKind::Bce => bce_loss(&mut tape, probs, &labels)?,
            };
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NaNLoss {
                    epoch,
                    batch: batch_no,
                    op: "loss".into(),
                });
            }
            tape.backward(loss).map_err(|e| wrap_nan(e, epoch, batch_no))?;
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            for (name, grad) in bound.gradients(&tape) {
                if let Some(g) = grad {
                    grads.insert(name, g.clone());
                }
            }
            adam_step(&mut model.store, &grads, &mut adam)?;
            loss_sum += loss_value * chunk.len() as f64;
            loss_count += chunk.len();
        }

        let val_scores = score_clips(model, &val, settings.batch_size.max(64))?;
        let counts = confusion_at(&val_scores, &val_labels, tau_active);
        let m = compute_metrics(&counts);
        rows.push(EpochRow {
            epoch,
            train_loss: loss_sum / loss_count as f64,
            val_f1: m.f1,
            val_acc: m.accuracy,
            val_sens: m.sensitivity,
            val_spec: m.specificity,
            tau: tau_active,
        });
        if let Some(s) = scheduler.as_mut() {
            s.update(&val_scores, &val_labels, epoch, &mut rng)?;
        }
    }

    let final_tau = scheduler.as_ref().map(|s| s.current_tau).unwrap_or(fixed_tau);
    let test_scores = score_clips(model, &test, settings.batch_size.max(64))?;
    let test_labels: Vec<u8> = test.iter().map(|c| c.label).collect();
    let clip_counts = confusion_at(&test_scores, &test_labels, final_tau);
    let test_clip = EvalSummary {
        counts: clip_counts,
        metrics: compute_metrics(&clip_counts),
    };
    let test_recording = recording_level_summary(
        &test, &test_scores, final_tau, settings.aggregate,
    )?;

    Ok(TrainReport {
        seed: settings.seed,
        epochs: rows,
        final_tau,
        test_clip,
        test_recording,
        frozen_params: model.store.frozen_names(),
    })
}

/// Aggregate clip probabilities per recording and tally recording-level
/// confusion counts.
pub fn recording_level_summary(
    clips: &[&ClipSample],
    scores: &[f64],
    tau: f64,
    mode: AggregateMode,
) -> Result<EvalSummary, TrainError> {
    let mut by_record: BTreeMap<&str, (Vec<f64>, u8)> = BTreeMap::new();
    for (c, &p) in clips.iter().zip(scores) {
        let slot = by_record.entry(&c.record_id).or_insert_with(|| (Vec::new(), c.label));
        slot.0.push(p);
    }
    let mut counts = ConfusionCounts::default();
    for (_, (probs, label)) in by_record {
        let (_, predicted) = aggregate_recording(&probs, tau, mode)
            .map_err(|e| TrainError::Config(e.to_string()))?;
        match (predicted == 1, label == 1) {
            (true, true) => counts.true_pos += 1,
            (true, false) => counts.false_pos += 1,
            (false, true) => counts.false_neg += 1,
            (false, false) => counts.true_neg += 1,
        }
    }
    Ok(EvalSummary {
        counts,
        metrics: compute_metrics(&counts),
    })
}
