//! Reference label and patient-map parsing, and directory-layout ingestion.
//!
//! Expected layout: a directory of `<record_id>.wav` files plus
//! `REFERENCE.csv` rows `record_id,label` with label `-1` (normal) or `1`
//! (abnormal). An optional `PATIENTS.csv` maps `record_id,patient_id`; when
//! absent, the record id with trailing digits stripped is used as the
//! patient id and the fallback is reported.

use super::{io_err, DataError};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

/// Parse `REFERENCE.csv`; labels map `-1 -> 0` and `1 -> 1`.
pub fn load_reference_csv(path: &Path) -> Result<Vec<(String, u8)>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Reference {
            path: path.display().to_string(),
            line: line_no,
            msg,
        };
        let (id, label_txt) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `record_id,label`, got {line:?}")))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(err("empty record id".into()));
        }
        let label = match label_txt.trim() {
            "-1" => 0u8,
            "1" => 1u8,
            other => return Err(err(format!("unknown label {other:?}, expected -1 or 1"))),
        };
        if !seen.insert(id.to_string()) {
            return Err(err(format!("duplicate record id {id:?}")));
        }
        out.push((id.to_string(), label));
    }
    Ok(out)
}

/// Parse `PATIENTS.csv` rows `record_id,patient_id`.
pub fn load_patients_csv(path: &Path) -> Result<BTreeMap<String, String>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Reference {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let (rec, pat) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `record_id,patient_id`, got {line:?}")))?;
        let (rec, pat) = (rec.trim(), pat.trim());
        if rec.is_empty() || pat.is_empty() {
            return Err(err("empty field".into()));
        }
        if out.insert(rec.to_string(), pat.to_string()).is_some() {
            return Err(err(format!("duplicate record id {rec:?}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordEntry {
    pub record_id: String,
    pub patient_id: String,
    pub label: u8,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub records: Vec<RecordEntry>,
    /// WAV files present on disk but absent from the reference list.
    pub skipped_unannotated: usize,
    /// True when patient ids came from the record-id-prefix fallback.
    pub patient_fallback_used: bool,
}

fn prefix_patient_id(record_id: &str) -> String {
    let stripped = record_id.trim_end_matches(|c: char| c.is_ascii_digit());
    if stripped.is_empty() {
        record_id.to_string()
    } else {
        stripped.to_string()
    }
}

/// Read a dataset directory without touching any audio payloads.
pub fn ingest_dir(dir: &Path) -> Result<IngestReport, DataError> {
    let reference_path = dir.join("REFERENCE.csv");
    if !reference_path.is_file() {
        return Err(DataError::Layout(format!(
            "no records found: {} is missing",
            reference_path.display()
        )));
    }
    let reference = load_reference_csv(&reference_path)?;
    if reference.is_empty() {
        return Err(DataError::Layout("no records found: REFERENCE.csv is empty".into()));
    }
    let patients_path = dir.join("PATIENTS.csv");
    let patient_map = if patients_path.is_file() {
        Some(load_patients_csv(&patients_path)?)
    } else {
        None
    };
    let mut records = Vec::with_capacity(reference.len());
    let mut annotated = BTreeSet::new();
    for (record_id, label) in reference {
        let path = dir.join(format!("{record_id}.wav"));
        if !path.is_file() {
            return Err(DataError::Layout(format!(
                "reference names {record_id} but {} does not exist",
                path.display()
            )));
        }
        let patient_id = match &patient_map {
            Some(map) => map
                .get(&record_id)
                .cloned()
                .ok_or_else(|| {
                    DataError::Layout(format!("PATIENTS.csv has no row for record {record_id}"))
                })?,
            None => prefix_patient_id(&record_id),
        };
        annotated.insert(record_id.clone());
        records.push(RecordEntry {
            record_id,
            patient_id,
            label,
            path,
        });
    }
    // Count unannotated recordings (present on disk, absent from the
    // reference); they are skipped, not ingested.
    let mut skipped = 0usize;
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some("wav") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                if !annotated.contains(stem) {
                    skipped += 1;
                }
            }
        }
    }
    records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    Ok(IngestReport {
        records,
        skipped_unannotated: skipped,
        patient_fallback_used: patient_map.is_none(),
    })
}
