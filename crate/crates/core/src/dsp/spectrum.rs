//! One-sided FFT magnitude spectrum for diagnostics.

use super::{DspError, Waveform};
use rustfft::{num_complex::Complex, FftPlanner};

/// One-sided magnitude spectrum as `(frequency_hz, magnitude)` pairs on the
/// bins `k * fs / N`, `k = 0 ..= N/2`. Magnitudes are unnormalized DFT
/// moduli, so Parseval holds as
/// `sum(x^2) = (1/N) * sum over the full spectrum of |X|^2`.
pub fn fft_magnitude(signal: &Waveform) -> Result<Vec<(f64, f64)>, DspError> {
    signal.validate()?;
    let n = signal.samples.len();
    let mut buf: Vec<Complex<f64>> = signal
        .samples
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let fs = signal.sample_rate_hz as f64;
    Ok((0..=n / 2)
        .map(|k| (k as f64 * fs / n as f64, buf[k].norm()))
        .collect())
}
