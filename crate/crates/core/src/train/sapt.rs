//! Adaptive probe thresholding: evaluate a grid of candidate decision
//! thresholds on validation scores each epoch, smooth the per-candidate F1
//! with an exponentially weighted moving average, and commit the running
//! argmax to the live threshold on a fixed epoch interval.

use super::metrics::{compute_metrics, confusion_at};
use super::TrainError;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaptSettings {
    /// Weight of the newest observation in the EWMA.
    pub beta_ewma: f64,
    /// Commit interval in epochs.
    pub gamma_interval: u32,
    /// Fraction of the validation set probed per epoch (seeded subsample
    /// when below one).
    pub probe_fraction: f64,
}

impl Default for SaptSettings {
    fn default() -> Self {
        SaptSettings {
            beta_ewma: 0.3,
            gamma_interval: 10,
            probe_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScheduler {
    pub candidate_grid: Vec<f64>,
    /// EWMA of validation F1 per candidate; unset until first observed.
    smoothed_f1: Vec<Option<f64>>,
    pub beta_ewma: f64,
    pub gamma_interval: u32,
    pub probe_fraction: f64,
    pub current_tau: f64,
}

impl Default for ThresholdScheduler {
    fn default() -> Self {
        Self::new(default_grid(), SaptSettings::default()).expect("default grid is valid")
    }
}

/// Candidates 0.05, 0.10, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| (i * 5) as f64 / 100.0).collect()
}

impl ThresholdScheduler {
    pub fn new(candidate_grid: Vec<f64>, settings: SaptSettings) -> Result<Self, TrainError> {
        if candidate_grid.is_empty() {
            return Err(TrainError::Config("candidate grid must not be empty".into()));
        }
        if candidate_grid
            .iter()
            .any(|&t| !(0.0..=1.0).contains(&t) || !t.is_finite())
        {
            return Err(TrainError::Config("candidates must lie in [0, 1]".into()));
        }
        if candidate_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TrainError::Config("candidate grid must be strictly increasing".into()));
        }
        if !(settings.beta_ewma > 0.0 && settings.beta_ewma <= 1.0) {
            return Err(TrainError::Config("beta_ewma must lie in (0, 1]".into()));
        }
        if settings.gamma_interval == 0 {
            return Err(TrainError::Config("gamma interval must be positive".into()));
        }
        if !(settings.probe_fraction > 0.0 && settings.probe_fraction <= 1.0) {
            return Err(TrainError::Config("probe fraction must lie in (0, 1]".into()));
        }
        let n = candidate_grid.len();
        Ok(ThresholdScheduler {
            candidate_grid,
            smoothed_f1: vec![None; n],
            beta_ewma: settings.beta_ewma,
            gamma_interval: settings.gamma_interval,
            probe_fraction: settings.probe_fraction,
            current_tau: 0.5,
        })
    }

    pub fn smoothed_f1(&self) -> &[Option<f64>] {
        &self.smoothed_f1
    }

    /// Seed one candidate's smoothed estimate directly (tests and resumed
    /// runs).
    pub fn set_smoothed(&mut self, candidate_index: usize, value: f64) {
        self.smoothed_f1[candidate_index] = Some(value);
    }

    /// One epoch of probing: smooth each candidate's validation F1, and at
    /// every `gamma_interval`-th epoch commit the argmax (ties break toward
    /// the smaller threshold) as the threshold for subsequent epochs.
    ///
    /// `epoch` is 1-based.
    pub fn update(
        &mut self,
        validation_scores: &[f64],
        validation_labels: &[u8],
        epoch: u32,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), TrainError> {
        if validation_scores.is_empty() || validation_scores.len() != validation_labels.len() {
            return Err(TrainError::Config(format!(
                "validation set of {} scores vs {} labels",
                validation_scores.len(),
                validation_labels.len()
            )));
        }
        let has_pos = validation_labels.iter().any(|&y| y == 1);
        let has_neg = validation_labels.iter().any(|&y| y == 0);
        if !has_pos || !has_neg {
            return Err(TrainError::SingleClassValidation);
        }
        // Optional stochastic probe: a seeded subsample of the validation
        // set, guaranteed to keep both classes.
        let (scores, labels): (Vec<f64>, Vec<u8>) = if self.probe_fraction < 1.0 {
            let keep = ((validation_scores.len() as f64 * self.probe_fraction).ceil() as usize)
                .clamp(2, validation_scores.len());
            loop {
                let mut idx: Vec<usize> = (0..validation_scores.len()).collect();
                rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), rng);
                idx.truncate(keep);
                idx.sort_unstable();
                let s: Vec<f64> = idx.iter().map(|&i| validation_scores[i]).collect();
                let l: Vec<u8> = idx.iter().map(|&i| validation_labels[i]).collect();
                if l.iter().any(|&y| y == 1) && l.iter().any(|&y| y == 0) {
                    break (s, l);
                }
            }
        } else {
            let _ = rng.random_range(0..2u32); // keep the stream advancing uniformly
            (validation_scores.to_vec(), validation_labels.to_vec())
        };
        for (j, &tau) in self.candidate_grid.iter().enumerate() {
            let f1 = compute_metrics(&confusion_at(&scores, &labels, tau)).f1;
            self.smoothed_f1[j] = Some(match self.smoothed_f1[j] {
                None => f1,
                Some(prev) => self.beta_ewma * f1 + (1.0 - self.beta_ewma) * prev,
            });
        }
        if epoch % self.gamma_interval == 0 {
            let mut best: Option<(f64, f64)> = None; // (tau, smoothed)
            for (j, &tau) in self.candidate_grid.iter().enumerate() {
                if let Some(s) = self.smoothed_f1[j] {
                    let better = match best {
                        None => true,
                        Some((_, bs)) => s > bs, // ties keep the smaller tau
                    };
                    if better {
                        best = Some((tau, s));
                    }
                }
            }
            if let Some((tau, _)) = best {
                self.current_tau = tau;
            }
        }
        Ok(())
    }
}
