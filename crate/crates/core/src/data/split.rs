//! Patient-wise dataset splitting: every record of one patient lands in
//! exactly one of train/val/test.

use super::{DataError, DatasetManifest, ManifestEntry, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct SplitRequest {
    /// Fraction of records targeted for the test split.
    pub test_fraction: f64,
    /// Per-class validation target, drawn from the training side; scaled
    /// down to a quarter of the training class when the target is not
    /// available at full size.
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SplitRequest {
    fn default() -> Self {
        SplitRequest {
            test_fraction: 0.2,
            val_per_class: 250,
            seed: 0,
        }
    }
}

/// Candidate record before split assignment.
#[derive(Debug, Clone)]
pub struct SplitCandidate {
    pub record_id: String,
    pub patient_id: String,
    pub label: u8,
    pub path: Option<String>,
}

/// Assign whole patients to train/test by seeded shuffle, then carve the
/// validation set out of the training side by whole patients as well.
/// Unreachable ratio targets produce warnings in the manifest, not errors.
pub fn patient_split(
    candidates: &[SplitCandidate],
    request: &SplitRequest,
) -> Result<DatasetManifest, DataError> {
    if candidates.is_empty() {
        return Err(DataError::Split("no records to split".into()));
    }
    if !(request.test_fraction > 0.0 && request.test_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "test fraction {} must lie in (0, 1)",
            request.test_fraction
        )));
    }
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if c.label > 1 {
            return Err(DataError::Split(format!(
                "record {} has label {}, expected 0 or 1",
                c.record_id, c.label
            )));
        }
        by_patient.entry(&c.patient_id).or_default().push(i);
    }
    if by_patient.len() < 3 {
        return Err(DataError::Split(format!(
            "need at least 3 distinct patients, got {}",
            by_patient.len()
        )));
    }
    let classes: [usize; 2] = candidates.iter().fold([0, 0], |mut acc, c| {
        acc[c.label as usize] += 1;
        acc
    });
    if classes[0] == 0 || classes[1] == 0 {
        return Err(DataError::Split("both classes must be present".into()));
    }

    let mut patients: Vec<&str> = by_patient.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    rand::seq::SliceRandom::shuffle(patients.as_mut_slice(), &mut rng);

    let n_records = candidates.len();
    let test_target = ((request.test_fraction * n_records as f64).round() as usize).max(1);
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    let mut test_count = 0usize;
    for &p in &patients {
        if test_count < test_target {
            assignment.insert(p, Split::Test);
            test_count += by_patient[p].len();
        } else {
            assignment.insert(p, Split::Train);
        }
    }

    // Validation targets from the training side, scaled when scarce.
    let mut train_class = [0usize; 2];
    for c in candidates {
        if assignment[c.patient_id.as_str()] == Split::Train {
            train_class[c.label as usize] += 1;
        }
    }
    let val_target = |class: usize| -> usize {
        request
            .val_per_class
            .min((train_class[class] / 4).max(1))
    };
    let targets = [val_target(0), val_target(1)];
    let mut val_counts = [0usize; 2];
    for &p in &patients {
        if assignment[p] != Split::Train {
            continue;
        }
        if val_counts[0] >= targets[0] && val_counts[1] >= targets[1] {
            break;
        }
        let mut patient_class = [0usize; 2];
        for &i in &by_patient[p] {
            patient_class[candidates[i].label as usize] += 1;
        }
        let helps = (patient_class[0] > 0 && val_counts[0] < targets[0])
            || (patient_class[1] > 0 && val_counts[1] < targets[1]);
        if helps {
            assignment.insert(p, Split::Val);
            val_counts[0] += patient_class[0];
            val_counts[1] += patient_class[1];
        }
    }

    let mut warnings = Vec::new();
    let achieved = test_count as f64 / n_records as f64;
    if (achieved - request.test_fraction).abs() > 0.05 {
        warnings.push(format!(
            "test share {:.3} deviates more than 0.05 from target {:.3} (patient granularity)",
            achieved, request.test_fraction
        ));
    }
    if val_counts[0] < targets[0] || val_counts[1] < targets[1] {
        warnings.push(format!(
            "validation targets unmet: got {}/{} normal, {}/{} abnormal",
            val_counts[0], targets[0], val_counts[1], targets[1]
        ));
    }

    let entries: Vec<ManifestEntry> = candidates
        .iter()
        .map(|c| ManifestEntry {
            record_id: c.record_id.clone(),
            patient_id: c.patient_id.clone(),
            label: c.label,
            split: assignment[c.patient_id.as_str()],
            path: c.path.clone(),
        })
        .collect();
    let manifest = DatasetManifest::from_entries(entries, warnings);
    manifest.validate()?;
    Ok(manifest)
}
