//! Dataset preparation shared by the commands: acquire recordings, run the
//! denoising front end, segment, extract features, and assign splits.

use super::config::{DataSource, RunConfig};
use super::CliError;
use crate::data::{
    ingest_dir, load_wav, patient_split, synthesize_dataset, DatasetManifest, FeatureCache, Split,
    SplitCandidate, SplitRequest,
};
use crate::dsp::{
    apply_iir_zero_phase, design_butterworth_lowpass, segment_fixed, wavelet_denoise, IirFilterSpec,
    Waveform,
};
use crate::mel::{log_mel, MelConfig};
use crate::train::ClipSample;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

/// An acquired labeled recording before preprocessing.
pub struct RawRecord {
    pub record_id: String,
    pub patient_id: String,
    pub label: u8,
    pub waveform: Waveform,
    pub path: Option<String>,
}

/// Load or synthesize the configured recordings, in record-id order.
pub fn acquire_records(cfg: &RunConfig) -> Result<Vec<RawRecord>, CliError> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let records = synthesize_dataset(&cfg.data.synth)?;
            Ok(records
                .into_iter()
                .map(|r| RawRecord {
                    record_id: r.waveform.source_id.clone(),
                    patient_id: r.waveform.patient_id.clone(),
                    label: r.label,
                    waveform: r.waveform,
                    path: None,
                })
                .collect())
        }
        DataSource::Directory => {
            let dir = cfg
                .data
                .dir
                .as_ref()
                .ok_or_else(|| CliError::Validation("data.dir is required".into()))?;
            let report = ingest_dir(Path::new(dir))?;
            let mut out = Vec::with_capacity(report.records.len());
            for rec in report.records {
                let mut wf = load_wav(&rec.path)?;
                wf.source_id = rec.record_id.clone();
                wf.patient_id = rec.patient_id.clone();
                out.push(RawRecord {
                    record_id: rec.record_id,
                    patient_id: rec.patient_id,
                    label: rec.label,
                    waveform: wf,
                    path: Some(rec.path.display().to_string()),
                });
            }
            Ok(out)
        }
    }
}

/// Denoise, low-pass, and segment one recording into fixed-length clips.
pub fn preprocess_record(
    waveform: &Waveform,
    cfg: &RunConfig,
    filter: &IirFilterSpec,
) -> Result<Vec<Waveform>, CliError> {
    let denoised = wavelet_denoise(waveform, cfg.preprocess.wavelet_levels)
        .map_err(|e| CliError::Validation(format!("{}: {e}", waveform.source_id)))?;
    let filtered = apply_iir_zero_phase(&denoised, filter)
        .map_err(|e| CliError::Validation(format!("{}: {e}", waveform.source_id)))?;
    segment_fixed(&filtered, cfg.preprocess.clip_seconds)
        .map_err(|e| CliError::Validation(format!("{}: {e}", waveform.source_id)))
}

/// Everything `train` and `evaluate` need: per-clip features with split
/// assignments plus the manifest that produced them.
pub struct PreparedDataset {
    pub clips: Vec<ClipSample>,
    pub manifest: DatasetManifest,
}

/// Run the full preparation pipeline with the manifest computed here.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<PreparedDataset, CliError> {
    let records = acquire_records(cfg)?;
    let candidates: Vec<SplitCandidate> = records
        .iter()
        .map(|r| SplitCandidate {
            record_id: r.record_id.clone(),
            patient_id: r.patient_id.clone(),
            label: r.label,
            path: r.path.clone(),
        })
        .collect();
    let manifest = patient_split(
        &candidates,
        &SplitRequest {
            test_fraction: cfg.split.test_fraction,
            val_per_class: cfg.split.val_per_class,
            seed: cfg.seed,
        },
    )?;
    let split_of: BTreeMap<&str, Split> = manifest
        .entries
        .iter()
        .map(|e| (e.record_id.as_str(), e.split))
        .collect();
    let clips = featureize(&records, cfg, |record_id| split_of[record_id])?;
    Ok(PreparedDataset { clips, manifest })
}

/// Prepare clips against an existing manifest (the `evaluate` path).
/// Records absent from the manifest are skipped.
pub fn prepare_with_manifest(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    only: Option<Split>,
) -> Result<Vec<ClipSample>, CliError> {
    let records = acquire_records(cfg)?;
    let split_of: BTreeMap<&str, Split> = manifest
        .entries
        .iter()
        .map(|e| (e.record_id.as_str(), e.split))
        .collect();
    let selected: Vec<&RawRecord> = records
        .iter()
        .filter(|r| {
            split_of
                .get(r.record_id.as_str())
                .map(|&s| only.map(|o| s == o).unwrap_or(true))
                .unwrap_or(false)
        })
        .collect();
    if selected.is_empty() {
        return Err(CliError::Validation(
            "no records selected by the manifest/split filter".into(),
        ));
    }
    let owned: Vec<RawRecord> = selected
        .into_iter()
        .map(|r| RawRecord {
            record_id: r.record_id.clone(),
            patient_id: r.patient_id.clone(),
            label: r.label,
            waveform: r.waveform.clone(),
            path: r.path.clone(),
        })
        .collect();
    featureize(&owned, cfg, |record_id| split_of[record_id])
}

/// Evaluate-everything path: treat every acquired record as test data.
pub fn prepare_all_as_test(cfg: &RunConfig) -> Result<Vec<ClipSample>, CliError> {
    let records = acquire_records(cfg)?;
    featureize(&records, cfg, |_| Split::Test)
}

fn featureize(
    records: &[RawRecord],
    cfg: &RunConfig,
    split_of: impl Fn(&str) -> Split + Sync,
) -> Result<Vec<ClipSample>, CliError> {
    let filter = design_butterworth_lowpass(
        cfg.preprocess.filter_order,
        cfg.preprocess.cutoff_hz,
        cfg.data.synth.sample_rate_hz,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    let cache = match &cfg.data.cache_dir {
        Some(dir) => Some(FeatureCache::new(Path::new(dir))?),
        None => None,
    };
    let mel_cfg: &MelConfig = &cfg.mel;
    // Records are independent; the per-record results are collected in
    // input order so the clip list is deterministic.
    let per_record: Vec<Result<Vec<ClipSample>, CliError>> = records
        .par_iter()
        .map(|r| {
            let clips = preprocess_record(&r.waveform, cfg, &filter)?;
            let split = split_of(&r.record_id);
            let mut out = Vec::with_capacity(clips.len());
            for (k, clip) in clips.iter().enumerate() {
                let mel = match &cache {
                    Some(c) => c.load_or_compute(clip, k, r.label, mel_cfg)?,
                    None => log_mel(clip, mel_cfg)?,
                };
                out.push(ClipSample {
                    record_id: r.record_id.clone(),
                    patient_id: r.patient_id.clone(),
                    label: r.label,
                    split,
                    mel,
                });
            }
            Ok(out)
        })
        .collect();
    let mut clips = Vec::new();
    for res in per_record {
        clips.extend(res?);
    }
    if clips.is_empty() {
        return Err(CliError::Validation("preparation produced no clips".into()));
    }
    Ok(clips)
}
