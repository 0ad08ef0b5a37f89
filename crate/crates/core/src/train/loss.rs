//! Binary cross-entropy and the penalty-weighted loss that scales it by
//! the batch's threshold-relative misclassification counts.

use super::TrainError;
use crate::autodiff::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Where the penalty threshold delta comes from during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSource {
    /// Pin delta to a fixed value.
    Fixed(f64),
    /// Follow the live decision threshold chosen by the scheduler.
    TrackSapt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PwlConfig {
    /// Emphasis between false negatives (weight `alpha`) and false
    /// positives (weight `1 - alpha`).
    pub alpha: f64,
    pub delta_source: DeltaSource,
}

impl Default for PwlConfig {
    fn default() -> Self {
        PwlConfig {
            alpha: 0.87,
            delta_source: DeltaSource::TrackSapt,
        }
    }
}

impl PwlConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TrainError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let DeltaSource::Fixed(d) = self.delta_source {
            if !(0.0..=1.0).contains(&d) {
                return Err(TrainError::Config(format!(
                    "fixed delta must lie in [0, 1], got {d}"
                )));
            }
        }
        Ok(())
    }
}

fn check_labels(labels: &[f64]) -> Result<(), TrainError> {
    if labels.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(TrainError::Config("labels must be exactly 0 or 1".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy over the batch; probabilities are clamped to
/// `[1e-7, 1 - 1e-7]` before the logs.
pub fn bce_loss(tape: &mut Tape, y_hat: Var, labels: &[f64]) -> Result<Var, TrainError> {
    check_labels(labels)?;
    if tape.value(y_hat).len() != labels.len() {
        return Err(TrainError::Config(format!(
            "{} predictions vs {} labels",
            tape.value(y_hat).len(),
            labels.len()
        )));
    }
    let y = tape.constant(Tensor::from_vec(&[labels.len()], labels.to_vec())?);
    let p = tape.clamp(y_hat, 1e-7, 1.0 - 1e-7)?;
    let log_p = tape.log(p)?;
    let pos = tape.mul(y, log_p)?;
    let one_minus_p = tape.one_minus(p)?;
    let log_q = tape.log(one_minus_p)?;
    let one_minus_y = tape.one_minus(y)?;
    let neg = tape.mul(one_minus_y, log_q)?;
    let sum = tape.add(pos, neg)?;
    let mean = tape.mean_all(sum)?;
    Ok(tape.neg(mean)?)
}

/// Threshold-relative misclassification counts over a batch:
/// `FNI = #{ y_hat <= delta and y = 1 }`, `FPI = #{ y_hat >= delta and
/// y = 0 }`. Both comparisons are inclusive, so a prediction sitting
/// exactly at `delta` counts against its class either way.
pub fn fni_fpi(scores: &[f64], labels: &[f64], delta: f64) -> (usize, usize) {
    let mut fni = 0;
    let mut fpi = 0;
    for (&p, &y) in scores.iter().zip(labels) {
        if p <= delta && y == 1.0 {
            fni += 1;
        }
        if p >= delta && y == 0.0 {
            fpi += 1;
        }
    }
    (fni, fpi)
}

/// Per-batch diagnostics of one penalty-weighted loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwlBreakdown {
    pub fni: usize,
    pub fpi: usize,
    pub r_penalty: f64,
    pub bce: f64,
    pub loss: f64,
}

/// Penalty-weighted loss: `R * BCE` with
/// `R = 1 + alpha * FNI(delta) + (1 - alpha) * FPI(delta)`.
///
/// `R` is computed from the forward values and applied as a detached
/// constant, so the gradient is exactly `R` times the BCE gradient.
pub fn pwl_loss(
    tape: &mut Tape,
    y_hat: Var,
    labels: &[f64],
    cfg: &PwlConfig,
    delta: f64,
) -> Result<(Var, PwlBreakdown), TrainError> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&delta) {
        return Err(TrainError::Config(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    let scores = tape.value(y_hat).data().to_vec();
    let bce = bce_loss(tape, y_hat, labels)?;
    let (fni, fpi) = fni_fpi(&scores, labels, delta);
    let r_penalty = 1.0 + cfg.alpha * fni as f64 + (1.0 - cfg.alpha) * fpi as f64;
    let loss = tape.mul_const(bce, r_penalty)?;
    let breakdown = PwlBreakdown {
        fni,
        fpi,
        r_penalty,
        bce: tape.value(bce).item(),
        loss: tape.value(loss).item(),
    };
    Ok((loss, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(tape: &mut Tape, values: &[f64]) -> Var {
        tape.leaf(Tensor::from_vec(&[values.len()], values.to_vec()).unwrap())
    }

    #[test]
    fn bce_symmetric_half_is_ln_two() {
        let mut tape = Tape::new();
        let y_hat = probs(&mut tape, &[0.5, 0.5]);
        let loss = bce_loss(&mut tape, y_hat, &[1.0, 0.0]).unwrap();
        assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let mut tape = Tape::new();
        let y_hat = probs(&mut tape, &[1.0, 0.0]);
        let loss = bce_loss(&mut tape, y_hat, &[1.0, 0.0]).unwrap();
        assert!(tape.value(loss).item() <= 1e-6);
    }

    #[test]
    fn bce_hand_value() {
        let mut tape = Tape::new();
        let y_hat = probs(&mut tape, &[0.9, 0.2]);
        let loss = bce_loss(&mut tape, y_hat, &[1.0, 0.0]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
        assert!((expected - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn bce_empty_batch_rejected() {
        let mut tape = Tape::new();
        let y_hat = tape.leaf(Tensor::zeros(&[0]));
        assert!(matches!(
            bce_loss(&mut tape, y_hat, &[]),
            Err(TrainError::EmptyBatch)
        ));
    }

    #[test]
    fn fni_fpi_enumeration() {
        let (fni, fpi) = fni_fpi(&[0.2, 0.9, 0.6], &[1.0, 0.0, 1.0], 0.5);
        assert_eq!((fni, fpi), (1, 1));
        let (fni, fpi) = fni_fpi(&[0.9, 0.1], &[1.0, 0.0], 0.5);
        assert_eq!((fni, fpi), (0, 0));
    }

    #[test]
    fn fni_fpi_boundary_is_inclusive_both_ways() {
        let (fni, fpi) = fni_fpi(&[0.5, 0.5], &[1.0, 0.0], 0.5);
        assert_eq!((fni, fpi), (1, 1));
    }

    #[test]
    fn pwl_equals_bce_without_misclassifications() {
        let mut tape = Tape::new();
        let y_hat = probs(&mut tape, &[0.9, 0.1]);
        let (loss, b) = pwl_loss(&mut tape, y_hat, &[1.0, 0.0], &PwlConfig::default(), 0.5).unwrap();
        assert_eq!(b.r_penalty, 1.0);
        assert!((tape.value(loss).item() - b.bce).abs() < 1e-15);
    }

    #[test]
    fn pwl_worked_penalty_values() {
        // FNI = 1, FPI = 1, alpha = 0.87 -> R = 2.0.
        let mut tape = Tape::new();
        let y_hat = probs(&mut tape, &[0.2, 0.9]);
        let (_, b) = pwl_loss(&mut tape, y_hat, &[1.0, 0.0], &PwlConfig::default(), 0.5).unwrap();
        assert!((b.r_penalty - 2.0).abs() < 1e-12);

        // FNI = 2, FPI = 0 at BCE = ln 2 -> PWL ~ 1.899223.
        let mut tape = Tape::new();
        let y_hat = probs(&mut tape, &[0.5, 0.5]);
        let (loss, b) = pwl_loss(&mut tape, y_hat, &[1.0, 1.0], &PwlConfig::default(), 0.5).unwrap();
        assert_eq!((b.fni, b.fpi), (2, 0));
        assert!((b.r_penalty - 2.74).abs() < 1e-12);
        assert!((tape.value(loss).item() - 1.899223).abs() < 1e-6);
    }

    #[test]
    fn pwl_gradient_is_r_times_bce_gradient() {
        let scores = [0.3, 0.8, 0.45];
        let labels = [1.0, 0.0, 0.0];
        let grad_of = |pwl: bool| -> Vec<f64> {
            let mut tape = Tape::new();
            let y_hat = probs(&mut tape, &scores);
            let loss = if pwl {
                pwl_loss(&mut tape, y_hat, &labels, &PwlConfig::default(), 0.5)
                    .unwrap()
                    .0
            } else {
                bce_loss(&mut tape, y_hat, &labels).unwrap()
            };
            tape.backward(loss).unwrap();
            tape.grad(y_hat).unwrap().data().to_vec()
        };
        let bce_grad = grad_of(false);
        let pwl_grad = grad_of(true);
        // R = 1 + 0.87*1 + 0.13*1 = 2.0 at delta 0.5.
        for (p, b) in pwl_grad.iter().zip(&bce_grad) {
            assert!((p - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_increments_match_alpha_per_error_kind() {
        let cfg = PwlConfig::default();
        let base = [0.9f64, 0.1];
        let base_labels = [1.0, 0.0];
        let r = |scores: &[f64], labels: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let y_hat = probs(&mut tape, scores);
            pwl_loss(&mut tape, y_hat, labels, &cfg, 0.5).unwrap().1.r_penalty
        };
        let r0 = r(&base, &base_labels);
        // Append one false negative.
        let r_fn = r(&[0.9, 0.1, 0.2], &[1.0, 0.0, 1.0]);
        assert!((r_fn - r0 - cfg.alpha).abs() < 1e-12);
        // Append one false positive instead.
        let r_fp = r(&[0.9, 0.1, 0.8], &[1.0, 0.0, 0.0]);
        assert!((r_fp - r0 - (1.0 - cfg.alpha)).abs() < 1e-12);
    }
}
