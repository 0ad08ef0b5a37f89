//! Minimal reverse-mode differentiation engine.
//!
//! Forward operations are recorded on a [`Tape`] (a Wengert list whose
//! creation order is the topological order); [`Tape::backward`] sweeps it in
//! reverse and accumulates gradients on leaf nodes. The op set is exactly
//! what the model and its losses require, every analytic gradient is
//! verifiable against central finite differences via
//! [`finite_diff_check`], and any NaN/Inf produced in a forward or backward
//! pass raises immediately with the offending operation named.
//!
//! All computation is in `f64`; checkpoints store `f32` payloads.

mod checkpoint;
mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{copy_allowed, load_checkpoint, save_checkpoint, CheckpointError};
pub use gradcheck::{finite_diff_check, GradCheckEntry, GradCheckReport, LossBuilder};
pub use params::{orthogonal, uniform_fan_in, BnStats, BoundParams, ParamStore, Parameter};
pub use tape::{GradSink, Tape, Var};
pub use tensor::{gemm, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: log of a non-positive value")]
    LogNonPositive { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this computation record; rebuild the forward pass first")]
    BackwardConsumed,
    #[error("batch norm eval mode requested before any training update")]
    BnUninitialized,
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

#[cfg(test)]
mod op_tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn dense_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_hand_product() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap());
        let w = tape.constant(Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap());
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 5.0]);
    }

    #[test]
    fn dense_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        match tape.dense(x, w, b).unwrap_err() {
            AdError::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![1, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[1, 1, 6, 4], &mut rng);
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0; // centered delta
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let k = tape.constant(Tensor::from_vec(&[1, 1, 3, 3], kernel).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d_same(xv, k, b).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn conv_all_ones_counts_neighbors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[1, 1, 4, 4], 1.0));
        let k = tape.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d_same(x, k, b).unwrap();
        let v = tape.value(y).data();
        // Corners see a 2x2 neighborhood, the center a full 3x3.
        assert_eq!(v[0], 4.0);
        assert_eq!(v[3], 4.0);
        assert_eq!(v[5], 9.0);
        assert_eq!(v[15], 4.0);
    }

    #[test]
    fn conv_channel_mismatch_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(
            tape.conv2d_same(x, k, b),
            Err(AdError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn batchnorm_standardizes_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[4, 2, 3, 3], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let gamma = tape.constant(Tensor::filled(&[2], 1.0));
        let beta = tape.constant(Tensor::zeros(&[2]));
        let mut stats = BnStats::new(2);
        let y = tape.batchnorm2d(xv, gamma, beta, &mut stats, true).unwrap();
        let v = tape.value(y);
        let m = 4 * 3 * 3;
        for ch in 0..2 {
            let mut vals = Vec::new();
            for b in 0..4 {
                for i in 0..9 {
                    vals.push(v.data()[(b * 2 + ch) * 9 + i]);
                }
            }
            let mean: f64 = vals.iter().sum::<f64>() / m as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3); // epsilon shifts variance slightly
        }
        assert_eq!(stats.updates, 1);
    }

    #[test]
    fn batchnorm_affine_applies_gamma_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor(&[4, 1, 3, 3], &mut rng);
        let run = |gamma: f64, beta: f64, x: &Tensor| -> Vec<f64> {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let g = tape.constant(Tensor::filled(&[1], gamma));
            let b = tape.constant(Tensor::filled(&[1], beta));
            let mut stats = BnStats::new(1);
            let y = tape.batchnorm2d(xv, g, b, &mut stats, true).unwrap();
            tape.value(y).data().to_vec()
        };
        let plain = run(1.0, 0.0, &x);
        let affine = run(2.0, 3.0, &x);
        for (p, a) in plain.iter().zip(&affine) {
            assert!((a - (2.0 * p + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_eval_before_any_update_fails() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let g = tape.constant(Tensor::filled(&[1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut stats = BnStats::new(1);
        assert!(matches!(
            tape.batchnorm2d(x, g, b, &mut stats, false),
            Err(AdError::BnUninitialized)
        ));
    }

    #[test]
    fn maxpool_single_window() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool_2x2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_cell() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[1, 1, 2, 2], 0.5));
        let y = tape.maxpool_2x2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(tape.maxpool_2x2(x).is_err());
    }

    #[test]
    fn pointwise_reference_values() {
        let mut tape = Tape::new();
        let zero = tape.leaf(Tensor::scalar(0.0));
        let sig = tape.sigmoid(zero).unwrap();
        assert_eq!(tape.value(sig).item(), 0.5);
        let th = tape.tanh(zero).unwrap();
        assert_eq!(tape.value(th).item(), 0.0);
        let loss = tape.add(sig, th).unwrap();
        tape.backward(loss).unwrap();
        // d sigmoid at 0 = 0.25, d tanh at 0 = 1.
        assert!((tape.grad(zero).unwrap().item() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn broadcast_row_vector_mul_reduces_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let v = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 10.0, 100.0]).unwrap());
        let y = tape.mul(x, v).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 20.0, 300.0, 4.0, 50.0, 600.0]);
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn time_slice_extracts_column() {
        let mut tape = Tape::new();
        // [1, 2, 2, 3]: channels 2, height 2, width 3
        let data: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let x = tape.leaf(Tensor::from_vec(&[1, 2, 2, 3], data).unwrap());
        let s = tape.time_slice(x, 1).unwrap();
        assert_eq!(tape.value(s).shape(), &[1, 4]);
        assert_eq!(tape.value(s).data(), &[1.0, 4.0, 7.0, 10.0]);
        let loss = tape.sum_all(s).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g.data()[1], 1.0);
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.sum(), 4.0);
    }
}
