//! Spectrogram cache file format: one UTF-8 JSON header line, a newline,
//! then the row-major little-endian `f32` payload. Round trips are
//! bit-exact.

use super::{MelError, MelSpectrogram};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// A cached spectrogram together with its dataset identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedSpectrogram {
    pub mel: MelSpectrogram,
    pub source_id: String,
    pub patient_id: String,
    pub label: u8,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n_mels: usize,
    n_frames: usize,
    config_fingerprint: String,
    source_id: String,
    patient_id: String,
    label: u8,
}

pub fn write_spectrogram(path: &Path, entry: &CachedSpectrogram) -> Result<(), MelError> {
    let header = Header {
        n_mels: entry.mel.n_mels,
        n_frames: entry.mel.n_frames,
        config_fingerprint: entry.mel.config_fingerprint.clone(),
        source_id: entry.source_id.clone(),
        patient_id: entry.patient_id.clone(),
        label: entry.label,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| MelError::Cache(e.to_string()))?;
    w.write_all(b"\n")?;
    for v in &entry.mel.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrogram(path: &Path) -> Result<CachedSpectrogram, MelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(MelError::Cache(format!(
                "{}: truncated header (no newline)",
                path.display()
            )));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| MelError::Cache(format!("{}: bad header: {e}", path.display())))?;
    let count = header.n_mels * header.n_frames;
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload).map_err(|_| {
        MelError::Cache(format!(
            "{}: payload shorter than {} cells",
            path.display(),
            count
        ))
    })?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(CachedSpectrogram {
        mel: MelSpectrogram {
            values,
            n_mels: header.n_mels,
            n_frames: header.n_frames,
            config_fingerprint: header.config_fingerprint,
        },
        source_id: header.source_id,
        patient_id: header.patient_id,
        label: header.label,
    })
}
