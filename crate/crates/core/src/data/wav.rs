//! RIFF/WAVE ingestion and emission: 16-bit PCM mono at 2000 Hz.

use super::DataError;
use crate::dsp::Waveform;
use std::path::Path;

/// The pipeline's fixed ingestion rate; other rates are rejected rather
/// than resampled.
pub const EXPECTED_SAMPLE_RATE_HZ: u32 = 2000;

fn wav_err(path: &Path, msg: String) -> DataError {
    DataError::Wav {
        path: path.display().to_string(),
        msg,
    }
}

/// Read a PCM 16-bit mono WAV at 2000 Hz, scaling samples to `[-1, 1]` by
/// dividing by 32768. Any other encoding is rejected with the offending
/// header field named. The file stem becomes the record's `source_id`;
/// `patient_id` is left empty for the ingest layer to fill.
pub fn load_wav(path: &Path) -> Result<Waveform, DataError> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("channels = {}, expected mono", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(
            path,
            format!(
                "sample format = {:?}/{} bits, expected 16-bit integer PCM",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    if spec.sample_rate != EXPECTED_SAMPLE_RATE_HZ {
        return Err(wav_err(
            path,
            format!(
                "sample rate = {} Hz, expected {EXPECTED_SAMPLE_RATE_HZ} Hz",
                spec.sample_rate
            ),
        ));
    }
    let samples: Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    let samples = samples.map_err(|e| wav_err(path, e.to_string()))?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Waveform::new(
        samples.into_iter().map(|v| v as f64 / 32768.0).collect(),
        EXPECTED_SAMPLE_RATE_HZ,
        &source_id,
        "",
    ))
}

/// Write a waveform as PCM 16-bit mono, quantizing with rounding; the
/// round trip through [`load_wav`] is within one LSB per sample.
pub fn write_wav(path: &Path, waveform: &Waveform) -> Result<(), DataError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for &s in &waveform.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(q)
            .map_err(|e| wav_err(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..500)
            .map(|i| ((i as f64 * 0.05).sin() * 0.8))
            .collect();
        let wf = Waveform::new(samples.clone(), 2000, "t", "p");
        write_wav(&path, &wf).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate_hz, 2000);
        assert_eq!(back.samples.len(), samples.len());
        for (a, b) in back.samples.iter().zip(&samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn extreme_negative_sample_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wav");
        let wf = Waveform::new(vec![-1.0, 0.0, 0.999], 2000, "m", "p");
        write_wav(&path, &wf).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.samples[0], -1.0);
        assert_eq!(back.samples[1], 0.0);
    }

    #[test]
    fn wrong_rate_rejected_with_rate_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hi.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(err.to_string().contains("44100"), "{err}");
    }

    #[test]
    fn stereo_rejected_with_channels_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 2000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }
}
