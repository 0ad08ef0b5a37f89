//! Time-domain signal processing for raw heart-sound recordings: wavelet
//! denoising, Butterworth low-pass filtering and fixed-length segmentation.

mod filter;
mod spectrum;
mod wavelet;

pub use filter::{apply_iir_zero_phase, design_butterworth_lowpass, IirFilterSpec, SecondOrderSection};
pub use spectrum::fft_magnitude;
pub use wavelet::{
    dwt_decompose, dwt_max_levels, idwt_reconstruct, soft_threshold, wavelet_denoise,
    WaveletDecomposition, DB4_FILTER_LEN,
};

use thiserror::Error;

/// A 1-D sampled audio signal with its provenance metadata.
///
/// Samples are dimensionless amplitudes, nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    /// Record identifier (e.g. the WAV file stem).
    pub source_id: String,
    /// Group identifier used for leakage-free dataset splits.
    pub patient_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: &str, patient_id: &str) -> Self {
        Waveform {
            samples,
            sample_rate_hz,
            source_id: source_id.to_string(),
            patient_id: patient_id.to_string(),
        }
    }

    /// Same metadata, different samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Waveform {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            source_id: self.source_id.clone(),
            patient_id: self.patient_id.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Every transform requires a non-empty, finite signal with a positive rate.
    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate_hz == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        if self.samples.is_empty() {
            return Err(DspError::EmptySignal);
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(DspError::NonFiniteSignal);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DspError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("signal contains non-finite samples")]
    NonFiniteSignal,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error(
        "signal of {len} samples supports at most {max_feasible} decomposition level(s), \
         {requested} requested"
    )]
    TooShortForLevels {
        len: usize,
        requested: usize,
        max_feasible: usize,
    },
    #[error("decomposition level {level} holds {got} coefficients, expected {expected}")]
    InconsistentCoefficients {
        level: usize,
        got: usize,
        expected: usize,
    },
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz (below Nyquist)")]
    CutoffOutOfRange { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("filter order must be at least 1")]
    ZeroFilterOrder,
    #[error("designed second-order section is unstable (pole modulus {modulus})")]
    UnstableSection { modulus: f64 },
    #[error("signal of {len} samples is too short for zero-phase filtering; needs more than {min}")]
    TooShortForFiltering { len: usize, min: usize },
    #[error("clip length must be positive")]
    NonPositiveClipLength,
}

/// Cut a recording into consecutive non-overlapping clips of exactly
/// `clip_seconds`.
///
/// A trailing remainder shorter than one clip is discarded. A recording
/// shorter than one clip is zero-padded at the end so it still yields one
/// full clip. Clips inherit the recording's metadata.
pub fn segment_fixed(signal: &Waveform, clip_seconds: f64) -> Result<Vec<Waveform>, DspError> {
    if !(clip_seconds > 0.0) {
        return Err(DspError::NonPositiveClipLength);
    }
    signal.validate()?;
    let clip_len = (clip_seconds * signal.sample_rate_hz as f64).round() as usize;
    if clip_len == 0 {
        return Err(DspError::NonPositiveClipLength);
    }
    let n = signal.samples.len();
    if n < clip_len {
        let mut padded = signal.samples.clone();
        padded.resize(clip_len, 0.0);
        return Ok(vec![signal.with_samples(padded)]);
    }
    let clips = (0..n / clip_len)
        .map(|k| signal.with_samples(signal.samples[k * clip_len..(k + 1) * clip_len].to_vec()))
        .collect();
    Ok(clips)
}
