//! Butterworth low-pass design (analog prototype, pre-warped bilinear
//! transform, cascaded second-order sections) and zero-phase
//! forward-backward application.

use super::{DspError, Waveform};
use std::f64::consts::PI;

/// One biquad stage; `a[0]` is always 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderSection {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl SecondOrderSection {
    /// Largest pole modulus of this section.
    fn pole_modulus(&self) -> f64 {
        // Roots of z^2 + a1 z + a2.
        let a1 = self.a[1];
        let a2 = self.a[2];
        let disc = a1 * a1 - 4.0 * a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            ((-a1 + r) * 0.5).abs().max(((-a1 - r) * 0.5).abs())
        } else {
            a2.sqrt()
        }
    }
}

/// A designed IIR low-pass realized as stable second-order sections.
#[derive(Debug, Clone)]
pub struct IirFilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: u32,
    pub sections: Vec<SecondOrderSection>,
}

impl IirFilterSpec {
    /// Complex magnitude of the cascade at `freq_hz` for a single pass.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz as f64;
        let (zr, zi) = (w.cos(), -w.sin()); // z^-1 = e^{-jw}
        let mut mag = 1.0;
        for s in &self.sections {
            // H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
            let eval = |c: &[f64; 3]| -> (f64, f64) {
                let z2r = zr * zr - zi * zi;
                let z2i = 2.0 * zr * zi;
                (c[0] + c[1] * zr + c[2] * z2r, c[1] * zi + c[2] * z2i)
            };
            let (nr, ni) = eval(&s.b);
            let (dr, di) = eval(&s.a);
            mag *= (nr * nr + ni * ni).sqrt() / (dr * dr + di * di).sqrt();
        }
        mag
    }
}

/// Design a digital Butterworth low-pass of the given order.
///
/// Analog prototype poles are mapped through the bilinear transform with
/// frequency pre-warping; every section is normalized to unity DC gain, so
/// the cascade is exactly 0 dB at DC and -3.0103 dB at the cutoff.
pub fn design_butterworth_lowpass(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: u32,
) -> Result<IirFilterSpec, DspError> {
    if order == 0 {
        return Err(DspError::ZeroFilterOrder);
    }
    let fs = sample_rate_hz as f64;
    let nyquist = fs / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(DspError::CutoffOutOfRange {
            cutoff_hz,
            nyquist_hz: nyquist,
        });
    }
    // Pre-warped analog cutoff so the digital response hits -3 dB exactly
    // at cutoff_hz after the bilinear map s -> 2 fs (z-1)/(z+1).
    let warped = 2.0 * fs * (PI * cutoff_hz / fs).tan();

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    // Conjugate analog pole pairs; k pairs with order-1-k.
    for k in 0..order / 2 {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let (pr, pi) = (warped * theta.cos(), warped * theta.sin());
        // Bilinear: z = (2 fs + p) / (2 fs - p) for p = pr + j pi.
        let c = 2.0 * fs;
        let denom = (c - pr) * (c - pr) + pi * pi;
        let zr = ((c + pr) * (c - pr) - pi * pi) / denom;
        let zi = (pi * (c - pr) + pi * (c + pr)) / denom;
        let a1 = -2.0 * zr;
        let a2 = zr * zr + zi * zi;
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(SecondOrderSection {
            b: [g, 2.0 * g, g],
            a: [1.0, a1, a2],
        });
    }
    if order % 2 == 1 {
        // Real pole at -warped.
        let zr = (2.0 * fs - warped) / (2.0 * fs + warped);
        let g = (1.0 - zr) / 2.0;
        sections.push(SecondOrderSection {
            b: [g, g, 0.0],
            a: [1.0, -zr, 0.0],
        });
    }
    for s in &sections {
        let modulus = s.pole_modulus();
        if modulus >= 1.0 - 1e-9 {
            return Err(DspError::UnstableSection { modulus });
        }
    }
    Ok(IirFilterSpec {
        order,
        cutoff_hz,
        sample_rate_hz,
        sections,
    })
}

/// Run one section over `x` in place, direct-form II transposed, with the
/// state seeded to its steady-state response for a step of `x[0]`.
fn run_section(section: &SecondOrderSection, x: &mut [f64]) {
    let [b0, b1, b2] = section.b;
    let [_, a1, a2] = section.a;
    // Steady state for unit DC input (every section has unit DC gain).
    let zi2 = b2 - a2;
    let zi1 = b1 - a1 + zi2;
    let x0 = x[0];
    let mut z1 = zi1 * x0;
    let mut z2 = zi2 * x0;
    for v in x.iter_mut() {
        let xn = *v;
        let y = b0 * xn + z1;
        z1 = b1 * xn - a1 * y + z2;
        z2 = b2 * xn - a2 * y;
        *v = y;
    }
}

/// Forward-backward filtering with reflective (mirror) padding of
/// `3 * order` samples on both ends, so the net phase response is zero and
/// the output has the input's length.
pub fn apply_iir_zero_phase(signal: &Waveform, spec: &IirFilterSpec) -> Result<Waveform, DspError> {
    signal.validate()?;
    let n = signal.samples.len();
    let pad = 3 * spec.order;
    if n <= pad {
        return Err(DspError::TooShortForFiltering { len: n, min: pad });
    }
    let x = &signal.samples;
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(x[n - 1 - i]);
    }
    for s in &spec.sections {
        run_section(s, &mut ext);
    }
    ext.reverse();
    for s in &spec.sections {
        run_section(s, &mut ext);
    }
    ext.reverse();
    Ok(signal.with_samples(ext[pad..pad + n].to_vec()))
}
