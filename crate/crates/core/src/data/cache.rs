//! On-disk spectrogram cache keyed by record, clip index and mel-config
//! fingerprint. Stale entries are recomputed, never served; writes are
//! atomic (temp file + rename).

use super::{io_err, DataError};
use crate::dsp::Waveform;
use crate::mel::{log_mel, read_spectrogram, write_spectrogram, CachedSpectrogram, MelConfig, MelSpectrogram};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: &Path) -> Result<Self, DataError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(FeatureCache { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, record_id: &str, clip_index: usize) -> PathBuf {
        self.dir.join(format!("{record_id}_{clip_index}.melspec"))
    }

    /// Return the cached spectrogram when its fingerprint matches the
    /// active config; otherwise compute, rewrite the entry atomically, and
    /// return the fresh value.
    pub fn load_or_compute(
        &self,
        clip: &Waveform,
        clip_index: usize,
        label: u8,
        cfg: &MelConfig,
    ) -> Result<MelSpectrogram, DataError> {
        let path = self.entry_path(&clip.source_id, clip_index);
        let fingerprint = cfg.fingerprint();
        if path.is_file() {
            if let Ok(entry) = read_spectrogram(&path) {
                if entry.mel.config_fingerprint == fingerprint
                    && entry.source_id == clip.source_id
                    && entry.label == label
                {
                    return Ok(entry.mel);
                }
            }
            // Unreadable or stale: fall through to recompute.
        }
        let mel = log_mel(clip, cfg)?;
        let entry = CachedSpectrogram {
            mel: mel.clone(),
            source_id: clip.source_id.clone(),
            patient_id: clip.patient_id.clone(),
            label,
        };
        let tmp = self.dir.join(format!(
            "{}_{}.melspec.tmp{}",
            clip.source_id,
            clip_index,
            std::process::id()
        ));
        write_spectrogram(&tmp, &entry)?;
        std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        Ok(mel)
    }
}
