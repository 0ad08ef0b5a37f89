//! The four batch commands: `synth`, `preprocess`, `train`, `evaluate`.

use super::config::{DataSource, PreprocessConfig, RunConfig};
use super::pipeline::{
    acquire_records, prepare_all_as_test, prepare_dataset, prepare_with_manifest,
};
use super::CliError;
use crate::autodiff::{load_checkpoint, save_checkpoint};
use crate::data::{
    write_wav, DatasetManifest, Split, SyntheticSpec, EXPECTED_SAMPLE_RATE_HZ,
};
use crate::dsp::{design_butterworth_lowpass, fft_magnitude, wavelet_denoise, apply_iir_zero_phase};
use crate::mel::MelConfig;
use crate::model::{transfer_and_freeze, Model, ModelConfig};
use crate::train::{
    confusion_at, recording_level_summary, score_clips, train, write_curves, write_report_csv,
    compute_metrics, EvalSummary, MetricsDocument, TrainReport,
};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Everything the training command persists besides the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub mel: MelConfig,
    pub preprocess: PreprocessConfig,
    pub mel_fingerprint: String,
    pub tau: f64,
    pub seed: u64,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))
}

/// Generate a synthetic dataset directory: WAV files plus `REFERENCE.csv`
/// and `PATIENTS.csv`, ready for `train` and `preprocess`.
pub fn cmd_synth(out_dir: &Path, spec: &SyntheticSpec, force: bool) -> Result<usize, CliError> {
    if out_dir.exists() {
        let non_empty = std::fs::read_dir(out_dir)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if non_empty && !force {
            return Err(CliError::Input(format!(
                "{} is not empty; pass --force to write into it",
                out_dir.display()
            )));
        }
    }
    ensure_dir(out_dir)?;
    let records = crate::data::synthesize_dataset(spec)?;
    let mut reference = String::new();
    let mut patients = String::new();
    for r in &records {
        write_wav(&out_dir.join(format!("{}.wav", r.waveform.source_id)), &r.waveform)?;
        let label = if r.label == 1 { "1" } else { "-1" };
        writeln!(reference, "{},{label}", r.waveform.source_id).expect("string write");
        writeln!(patients, "{},{}", r.waveform.source_id, r.waveform.patient_id)
            .expect("string write");
    }
    std::fs::write(out_dir.join("REFERENCE.csv"), reference)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(out_dir.join("PATIENTS.csv"), patients)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(records.len())
}

#[derive(Debug, Clone, Serialize)]
pub struct PreprocessRow {
    pub record_id: String,
    pub n_clips: usize,
    pub rms_raw: f64,
    pub rms_denoised: f64,
    pub rms_filtered: f64,
}

/// Denoise, filter and segment every recording in a dataset directory,
/// writing the clips and a per-record summary (and, optionally, the
/// before/after spectra).
pub fn cmd_preprocess(
    in_dir: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
    emit_fft: bool,
) -> Result<Vec<PreprocessRow>, CliError> {
    let mut run_cfg = RunConfig::default();
    run_cfg.data.source = DataSource::Directory;
    run_cfg.data.dir = Some(in_dir.display().to_string());
    run_cfg.preprocess = cfg.clone();
    let records = acquire_records(&run_cfg)?;
    ensure_dir(out_dir)?;
    let filter = design_butterworth_lowpass(cfg.filter_order, cfg.cutoff_hz, EXPECTED_SAMPLE_RATE_HZ)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut rows = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for r in &records {
        let denoised = match wavelet_denoise(&r.waveform, cfg.wavelet_levels) {
            Ok(d) => d,
            Err(e) => {
                failures.push(format!("{}: {e}", r.record_id));
                continue;
            }
        };
        let filtered = match apply_iir_zero_phase(&denoised, &filter) {
            Ok(f) => f,
            Err(e) => {
                failures.push(format!("{}: {e}", r.record_id));
                continue;
            }
        };
        let clips = match crate::dsp::segment_fixed(&filtered, cfg.clip_seconds) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("{}: {e}", r.record_id));
                continue;
            }
        };
        for (k, clip) in clips.iter().enumerate() {
            write_wav(&out_dir.join(format!("{}_clip{k}.wav", r.record_id)), clip)?;
        }
        if emit_fft {
            for (suffix, wf) in [("raw", &r.waveform), ("filtered", &filtered)] {
                let spectrum = fft_magnitude(wf).map_err(|e| CliError::Validation(e.to_string()))?;
                let mut csv = String::from("frequency_hz,magnitude\n");
                for (f, m) in spectrum {
                    writeln!(csv, "{f},{m}").expect("string write");
                }
                std::fs::write(out_dir.join(format!("{}_fft_{suffix}.csv", r.record_id)), csv)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
            }
        }
        rows.push(PreprocessRow {
            record_id: r.record_id.clone(),
            n_clips: clips.len(),
            rms_raw: r.waveform.rms(),
            rms_denoised: denoised.rms(),
            rms_filtered: filtered.rms(),
        });
    }
    let mut summary = String::from("record_id,n_clips,rms_raw,rms_denoised,rms_filtered\n");
    for row in &rows {
        writeln!(
            summary,
            "{},{},{},{},{}",
            row.record_id, row.n_clips, row.rms_raw, row.rms_denoised, row.rms_filtered
        )
        .expect("string write");
    }
    std::fs::write(out_dir.join("summary.csv"), summary)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    if !failures.is_empty() {
        return Err(CliError::Input(format!(
            "{} record(s) failed preprocessing:\n{}",
            failures.len(),
            failures.join("\n")
        )));
    }
    Ok(rows)
}

pub struct TrainOutputs {
    pub report: TrainReport,
    pub metrics: MetricsDocument,
    pub checkpoint_path: PathBuf,
}

/// Full training run: prepare the dataset, train (optionally fine-tuning
/// from a standard-cell checkpoint with the convolutional stack frozen),
/// and write every artifact into the output directory.
pub fn cmd_train(
    cfg: &RunConfig,
    out_dir: &Path,
    fine_tune_from: Option<&Path>,
) -> Result<TrainOutputs, CliError> {
    let errors = cfg.validation_errors();
    if !errors.is_empty() {
        return Err(CliError::Validation(errors.join("\n")));
    }
    ensure_dir(out_dir)?;
    std::fs::write(out_dir.join("resolved_config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Internal(e.to_string()))?;

    let prepared = prepare_dataset(cfg)?;
    prepared.manifest.save(&out_dir.join("manifest.json"))?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.n_mels = cfg.mel.n_mels;
    if let Some(first) = prepared.clips.first() {
        model_cfg.n_frames = first.mel.n_frames;
    }
    let mut model = match fine_tune_from {
        None => Model::new(model_cfg, cfg.seed)?,
        Some(ckpt_path) => {
            let (source_store, meta_json) = load_checkpoint(ckpt_path)?;
            let meta: CheckpointMeta = serde_json::from_value(meta_json)
                .map_err(|e| CliError::Validation(format!("checkpoint metadata: {e}")))?;
            if meta.mel_fingerprint != cfg.mel.fingerprint() {
                return Err(CliError::Validation(format!(
                    "mel config fingerprint {} does not match the checkpoint's {}",
                    cfg.mel.fingerprint(),
                    meta.mel_fingerprint
                )));
            }
            transfer_and_freeze(&source_store, &meta.model, model_cfg, cfg.seed)?
        }
    };

    let mut settings = cfg.train.clone();
    settings.seed = cfg.seed;
    let report = train(&mut model, &prepared.clips, &settings)?;

    let meta = CheckpointMeta {
        model: model.cfg.clone(),
        mel: cfg.mel.clone(),
        preprocess: cfg.preprocess.clone(),
        mel_fingerprint: cfg.mel.fingerprint(),
        tau: report.final_tau,
        seed: cfg.seed,
    };
    let checkpoint_path = out_dir.join("model.ckpt");
    save_checkpoint(
        &model.store,
        &serde_json::to_value(&meta).expect("meta serializes"),
        &checkpoint_path,
    )?;
    write_report_csv(&report, &out_dir.join("report.csv"))?;
    write_curves(&report, out_dir)?;
    let metrics = MetricsDocument::from_report(&report);
    metrics.write(&out_dir.join("metrics.json"))?;
    Ok(TrainOutputs {
        report,
        metrics,
        checkpoint_path,
    })
}

/// Score a dataset with a trained checkpoint and report clip- and
/// recording-level metrics at the stored (or overridden) threshold.
pub fn cmd_evaluate(
    checkpoint: &Path,
    data_dir: &Path,
    manifest_path: Option<&Path>,
    only_split: Option<Split>,
    tau_override: Option<f64>,
) -> Result<MetricsDocument, CliError> {
    let (store, meta_json) = load_checkpoint(checkpoint)?;
    let meta: CheckpointMeta = serde_json::from_value(meta_json)
        .map_err(|e| CliError::Validation(format!("checkpoint metadata: {e}")))?;
    if meta.mel.fingerprint() != meta.mel_fingerprint {
        return Err(CliError::Validation(format!(
            "checkpoint mel fingerprint {} disagrees with its embedded config ({})",
            meta.mel_fingerprint,
            meta.mel.fingerprint()
        )));
    }
    if let Some(tau) = tau_override {
        if !(0.0..=1.0).contains(&tau) {
            return Err(CliError::Validation(format!("tau {tau} out of [0, 1]")));
        }
    }
    let mut cfg = RunConfig::default();
    cfg.data.source = DataSource::Directory;
    cfg.data.dir = Some(data_dir.display().to_string());
    cfg.mel = meta.mel.clone();
    cfg.preprocess = meta.preprocess.clone();
    cfg.model = meta.model.clone();
    cfg.seed = meta.seed;

    let clips = match manifest_path {
        Some(p) => {
            let manifest = DatasetManifest::load(p)?;
            prepare_with_manifest(&cfg, &manifest, only_split)?
        }
        None => prepare_all_as_test(&cfg)?,
    };
    let labels: Vec<u8> = clips.iter().map(|c| c.label).collect();
    if labels.iter().all(|&y| y == 0) || labels.iter().all(|&y| y == 1) {
        return Err(CliError::Validation(
            "evaluation set contains a single class; F1 is undefined".into(),
        ));
    }

    let mut model = Model::new(cfg.model.clone(), meta.seed)?;
    replace_params(&mut model, store)?;
    let refs: Vec<&crate::train::ClipSample> = clips.iter().collect();
    let scores = score_clips(&mut model, &refs, 64)?;
    let tau = tau_override.unwrap_or(meta.tau);
    let counts = confusion_at(&scores, &labels, tau);
    let clip_summary = EvalSummary {
        counts,
        metrics: compute_metrics(&counts),
    };
    let recording = recording_level_summary(&refs, &scores, tau, crate::data::AggregateMode::Mean)?;
    Ok(MetricsDocument {
        seed: meta.seed,
        tau,
        clip: clip_summary,
        recording,
        frozen_params: vec![],
    })
}

/// Swap a loaded parameter store into a freshly built model, requiring an
/// exact name/shape match.
fn replace_params(model: &mut Model, loaded: crate::autodiff::ParamStore) -> Result<(), CliError> {
    for p in model.store.params() {
        let from = loaded.param(&p.name).ok_or_else(|| {
            CliError::Validation(format!("checkpoint is missing parameter {}", p.name))
        })?;
        if from.value.shape() != p.value.shape() {
            return Err(CliError::Validation(format!(
                "checkpoint parameter {}: shape {:?} vs expected {:?}",
                p.name,
                from.value.shape(),
                p.value.shape()
            )));
        }
    }
    model.store = loaded;
    Ok(())
}
