//! Log-Mel spectrogram features: STFT power, triangular mel filterbank,
//! per-spectrogram normalization, and the binary cache file format.

mod cache;

pub use cache::{read_spectrogram, write_spectrogram, CachedSpectrogram};

use crate::dsp::Waveform;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use thiserror::Error;

/// STFT / mel projection parameters. The analysis window is a periodic Hann.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub floor_epsilon: f64,
    /// Per-spectrogram z-score normalization.
    pub normalize: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_fft: 512,
            hop: 256,
            n_mels: 64,
            fmin_hz: 20.0,
            fmax_hz: 1000.0,
            floor_epsilon: 1e-10,
            normalize: true,
        }
    }
}

impl MelConfig {
    /// Stable 16-hex-digit fingerprint of every parameter; cache entries and
    /// checkpoints embed it so stale features are never mixed in.
    pub fn fingerprint(&self) -> String {
        let canon = format!(
            "n_fft={};hop={};n_mels={};fmin={:.9e};fmax={:.9e};eps={:.9e};norm={};window=hann",
            self.n_fft, self.hop, self.n_mels, self.fmin_hz, self.fmax_hz, self.floor_epsilon,
            self.normalize
        );
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), MelError> {
        let nyquist = sample_rate_hz as f64 / 2.0;
        if self.n_fft == 0 || self.hop == 0 || self.hop > self.n_fft {
            return Err(MelError::BadConfig(format!(
                "need 0 < hop <= n_fft, got hop={} n_fft={}",
                self.hop, self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(MelError::BadConfig("n_mels must be positive".into()));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(MelError::BadConfig(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin_hz, self.fmax_hz
            )));
        }
        if !(self.floor_epsilon > 0.0) {
            return Err(MelError::BadConfig("floor_epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MelError {
    #[error("invalid mel configuration: {0}")]
    BadConfig(String),
    #[error("clip of {len} samples is shorter than n_fft = {n_fft}")]
    ClipTooShort { len: usize, n_fft: usize },
    #[error("mel filter {index} is empty; lower n_mels or raise n_fft")]
    EmptyFilter { index: usize },
    #[error("spectrogram cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Squared-magnitude STFT grid, row-major `(n_fft/2 + 1) x n_frames`.
#[derive(Debug, Clone)]
pub struct PowerSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.frames + frame]
    }
}

/// A log-power mel grid, row-major `n_mels x n_frames`.
///
/// Values are stored as `f32` end to end so results are identical whether a
/// spectrogram was freshly computed or read back from the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f32>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub config_fingerprint: String,
}

impl MelSpectrogram {
    pub fn at(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }
}

/// Number of analysis frames with no-centering framing.
pub fn stft_frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    1 + (len - n_fft) / hop
}

fn hann_window(n: usize) -> Vec<f64> {
    // Periodic Hann, the STFT convention.
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Hann-windowed squared-magnitude spectra with no-centering framing:
/// `n_frames = 1 + floor((len - n_fft) / hop)`.
pub fn stft_power(clip: &Waveform, cfg: &MelConfig) -> Result<PowerSpectrogram, MelError> {
    clip.validate()?;
    cfg.validate(clip.sample_rate_hz)?;
    let n = clip.samples.len();
    if n < cfg.n_fft {
        return Err(MelError::ClipTooShort { len: n, n_fft: cfg.n_fft });
    }
    let frames = stft_frame_count(n, cfg.n_fft, cfg.hop);
    let bins = cfg.n_fft / 2 + 1;
    let window = hann_window(cfg.n_fft);
    let fft = rustfft::FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut data = vec![0.0; bins * frames];
    let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); cfg.n_fft];
    for frame in 0..frames {
        let start = frame * cfg.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = rustfft::num_complex::Complex::new(clip.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (bin, c) in buf.iter().take(bins).enumerate() {
            data[bin * frames + frame] = c.norm_sqr();
        }
    }
    Ok(PowerSpectrogram { bins, frames, data })
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, row-major `n_mels x (n_fft/2 + 1)`, each row
/// normalized to sum to one.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate_hz: u32) -> Result<Vec<f64>, MelError> {
    cfg.validate(sample_rate_hz)?;
    let bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax_hz);
    // n_mels + 2 edge frequencies, uniform on the mel axis.
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate_hz as f64 / cfg.n_fft as f64)
        .collect();
    let mut fb = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut fb[m * bins..(m + 1) * bins];
        let mut sum = 0.0;
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz[k];
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
            sum += *w;
        }
        if sum <= 0.0 {
            return Err(MelError::EmptyFilter { index: m });
        }
        row.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(fb)
}

/// Process-wide filterbank cache keyed by config fingerprint and rate.
fn cached_filterbank(cfg: &MelConfig, sample_rate_hz: u32) -> Result<std::sync::Arc<Vec<f64>>, MelError> {
    static CACHE: OnceLock<Mutex<HashMap<(String, u32), std::sync::Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (cfg.fingerprint(), sample_rate_hz);
    if let Some(fb) = cache.lock().unwrap().get(&key) {
        return Ok(fb.clone());
    }
    let fb = std::sync::Arc::new(mel_filterbank(cfg, sample_rate_hz)?);
    cache.lock().unwrap().insert(key, fb.clone());
    Ok(fb)
}

/// Log-power mel spectrogram of one fixed-length clip:
/// `log(max(filterbank . stft_power, floor_epsilon))`, optionally z-scored
/// per spectrogram (a constant grid normalizes to all zeros).
pub fn log_mel(clip: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram, MelError> {
    let power = stft_power(clip, cfg)?;
    let fb = cached_filterbank(cfg, clip.sample_rate_hz)?;
    let frames = power.frames;
    let bins = power.bins;
    let mut grid = vec![0.0f64; cfg.n_mels * frames];
    for m in 0..cfg.n_mels {
        let row = &fb[m * bins..(m + 1) * bins];
        for t in 0..frames {
            let mut acc = 0.0;
            for (k, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    acc += w * power.data[k * frames + t];
                }
            }
            grid[m * frames + t] = acc.max(cfg.floor_epsilon).ln();
        }
    }
    if cfg.normalize {
        let n = grid.len() as f64;
        let mean = grid.iter().sum::<f64>() / n;
        let var = grid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < 1e-12 {
            grid.iter_mut().for_each(|v| *v = 0.0);
        } else {
            grid.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    Ok(MelSpectrogram {
        values: grid.into_iter().map(|v| v as f32).collect(),
        n_mels: cfg.n_mels,
        n_frames: frames,
        config_fingerprint: cfg.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 2000, "clip", "p")
    }

    #[test]
    fn frame_count_for_standard_clip() {
        assert_eq!(stft_frame_count(10_000, 512, 256), 38);
    }

    #[test]
    fn zero_clip_gives_zero_power() {
        let p = stft_power(&clip(vec![0.0; 2048]), &MelConfig::default()).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_maxes_at_expected_bin() {
        let fs = 2000.0;
        let samples: Vec<f64> = (0..4096)
            .map(|i| (2.0 * std::f64::consts::PI * 250.0 * i as f64 / fs).sin())
            .collect();
        let p = stft_power(&clip(samples), &MelConfig::default()).unwrap();
        for t in 0..p.frames {
            let (best, _) = (0..p.bins)
                .map(|b| (b, p.at(b, t)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert_eq!(best, 64); // round(250 * 512 / 2000)
        }
    }

    #[test]
    fn clip_shorter_than_fft_rejected() {
        let err = stft_power(&clip(vec![0.1; 100]), &MelConfig::default()).unwrap_err();
        assert!(matches!(err, MelError::ClipTooShort { .. }));
    }

    #[test]
    fn filterbank_rows_sum_to_one_with_increasing_centers() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg, 2000).unwrap();
        let bins = cfg.n_fft / 2 + 1;
        let mut centers = Vec::new();
        for m in 0..cfg.n_mels {
            let row = &fb[m * bins..(m + 1) * bins];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {m} sums to {sum}");
            let center = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            centers.push(center);
        }
        assert!(centers.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn mel_scale_reference_point() {
        assert!((hz_to_mel(1000.0) - 999.99).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(440.0)) - 440.0).abs() < 1e-9);
    }

    #[test]
    fn too_many_mels_rejected() {
        let cfg = MelConfig {
            n_mels: 400,
            ..MelConfig::default()
        };
        assert!(matches!(
            mel_filterbank(&cfg, 2000),
            Err(MelError::EmptyFilter { .. })
        ));
    }

    #[test]
    fn zero_clip_unnormalized_hits_floor() {
        let cfg = MelConfig {
            normalize: false,
            ..MelConfig::default()
        };
        let m = log_mel(&clip(vec![0.0; 10_000]), &cfg).unwrap();
        let expected = (1e-10f64).ln() as f32;
        assert!(m.values.iter().all(|&v| v == expected));
    }

    #[test]
    fn zero_clip_normalized_is_all_zero() {
        let m = log_mel(&clip(vec![0.0; 10_000]), &MelConfig::default()).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_shape_for_five_second_clip() {
        let m = log_mel(&clip(vec![0.01; 10_000]), &MelConfig::default()).unwrap();
        assert_eq!((m.n_mels, m.n_frames), (64, 38));
    }

    #[test]
    fn normalized_spectrogram_has_unit_stats() {
        let samples: Vec<f64> = (0..10_000)
            .map(|i| (2.0 * std::f64::consts::PI * 120.0 * i as f64 / 2000.0).sin() * 0.4)
            .collect();
        let m = log_mel(&clip(samples), &MelConfig::default()).unwrap();
        let n = m.values.len() as f64;
        let mean = m.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = m.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn determinism_and_scale_monotonicity() {
        let samples: Vec<f64> = (0..10_000)
            .map(|i| ((i % 37) as f64 / 37.0 - 0.5) * 0.3)
            .collect();
        let cfg = MelConfig {
            normalize: false,
            ..MelConfig::default()
        };
        let a = log_mel(&clip(samples.clone()), &cfg).unwrap();
        let b = log_mel(&clip(samples.clone()), &cfg).unwrap();
        assert_eq!(a, b);
        let louder: Vec<f64> = samples.iter().map(|s| s * 3.0).collect();
        let c = log_mel(&clip(louder), &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&c.values) {
            assert!(y >= x, "scaling up must not decrease any pre-normalization cell");
        }
    }
}
