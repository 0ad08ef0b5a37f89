//! Dataset handling: WAV and reference-label ingestion (CinC-style layout),
//! leakage-free patient-wise splits, synthetic desk-scale data, the
//! spectrogram cache, and recording-level aggregation.

mod cache;
mod reference;
mod split;
mod synth;
mod wav;

pub use cache::FeatureCache;
pub use reference::{ingest_dir, load_patients_csv, load_reference_csv, IngestReport, RecordEntry};
pub use split::{patient_split, SplitCandidate, SplitRequest};
pub use synth::{synthesize_dataset, ArrhythmiaModel, SyntheticRecord, SyntheticSpec};
pub use wav::{load_wav, write_wav, EXPECTED_SAMPLE_RATE_HZ};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Wav { path: String, msg: String },
    #[error("{path} line {line}: {msg}")]
    Reference {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("dataset layout: {0}")]
    Layout(String),
    #[error("split: {0}")]
    Split(String),
    #[error("synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Empty(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Mel(#[from] crate::mel::MelError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub patient_id: String,
    /// 0 = normal, 1 = abnormal (the clinical positive).
    pub label: u8,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub abnormal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Per-split class tallies, keyed `train`/`val`/`test`.
    pub class_counts: BTreeMap<String, ClassCounts>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub(crate) fn from_entries(entries: Vec<ManifestEntry>, warnings: Vec<String>) -> Self {
        let mut class_counts: BTreeMap<String, ClassCounts> = BTreeMap::new();
        for e in &entries {
            let c = class_counts.entry(e.split.as_str().to_string()).or_default();
            if e.label == 0 {
                c.normal += 1;
            } else {
                c.abnormal += 1;
            }
        }
        DatasetManifest {
            entries,
            class_counts,
            warnings,
        }
    }

    /// Every entry labeled 0/1 and no patient straddling two splits.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.entries {
            if e.label > 1 {
                return Err(DataError::Manifest(format!(
                    "record {} has label {}, expected 0 or 1",
                    e.record_id, e.label
                )));
            }
            match seen.get(e.patient_id.as_str()) {
                None => {
                    seen.insert(&e.patient_id, e.split);
                }
                Some(&s) if s != e.split => {
                    return Err(DataError::Manifest(format!(
                        "patient {} appears in both {} and {}",
                        e.patient_id,
                        s.as_str(),
                        e.split.as_str()
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// How per-clip probabilities combine into a recording-level call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    #[default]
    Mean,
    /// Sensitivity-biased screening: one hot clip flags the recording.
    Max,
}

/// Collapse clip probabilities into `(recording probability, label)`;
/// the label is positive when the probability reaches `tau`.
pub fn aggregate_recording(
    clip_probabilities: &[f64],
    tau: f64,
    mode: AggregateMode,
) -> Result<(f64, u8), DataError> {
    if clip_probabilities.is_empty() {
        return Err(DataError::Empty("no clip probabilities to aggregate".into()));
    }
    let p = match mode {
        AggregateMode::Mean => {
            clip_probabilities.iter().sum::<f64>() / clip_probabilities.len() as f64
        }
        AggregateMode::Max => clip_probabilities.iter().cloned().fold(f64::MIN, f64::max),
    };
    Ok((p, u8::from(p >= tau)))
}
