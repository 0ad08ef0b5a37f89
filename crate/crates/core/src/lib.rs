//! Arrhythmia detection from heart-sound recordings.
//!
//! The crate is organized as a pipeline:
//!
//! * [`dsp`] — wavelet + IIR denoising and fixed-length segmentation of raw
//!   phonocardiogram waveforms,
//! * [`mel`] — log-Mel spectrogram features,
//! * [`autodiff`] — a small reverse-mode differentiation engine with
//!   finite-difference gradient checking,
//! * [`model`] — the CNN front-end and the H∞-gated LSTM classifier,
//! * [`train`] — penalty-weighted loss, adaptive probe thresholding, Adam,
//!   metrics and the epoch loop,
//! * [`data`] — WAV/reference ingestion, patient-wise splits, synthetic
//!   dataset generation and the feature cache,
//! * [`cli`] — the `cardiodx` command-line front end.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dsp;
pub mod mel;
pub mod model;
pub mod train;
