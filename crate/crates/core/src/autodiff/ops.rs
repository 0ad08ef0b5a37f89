//! Differentiable operations recorded on the [`Tape`]: exactly the set the
//! model and its losses need.

use super::params::BnStats;
use super::tensor::{gemm, Tensor};
use super::{AdError, Tape, Var};
use rayon::prelude::*;

const KERNEL: usize = 3;

fn shape_mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> AdError {
    AdError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn bad_shape(op: &'static str, expected: &str, got: &Tensor) -> AdError {
    AdError::BadShape {
        op,
        expected: expected.to_string(),
        got: got.shape().to_vec(),
    }
}

/// How the right operand of an element-wise binary op lines up with the left.
#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    /// One side is a single-element tensor.
    LhsScalar,
    RhsScalar,
    /// `lhs` is `[rows, k]`, `rhs` is `[k]`, applied per row.
    RhsRow,
}

fn classify(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Result<Broadcast, AdError> {
    if lhs.shape() == rhs.shape() {
        Ok(Broadcast::Same)
    } else if rhs.len() == 1 {
        Ok(Broadcast::RhsScalar)
    } else if lhs.len() == 1 {
        Ok(Broadcast::LhsScalar)
    } else if lhs.shape().len() == 2 && rhs.shape().len() == 1 && lhs.shape()[1] == rhs.shape()[0] {
        Ok(Broadcast::RhsRow)
    } else {
        Err(shape_mismatch(op, lhs, rhs))
    }
}

/// Sum `full` down to the broadcast operand's shape.
fn reduce_to(kind: Broadcast, side_is_lhs: bool, full: &Tensor, operand_shape: &[usize]) -> Tensor {
    match (kind, side_is_lhs) {
        (Broadcast::Same, _) | (Broadcast::RhsScalar, true) | (Broadcast::LhsScalar, false) => {
            full.clone()
        }
        (Broadcast::RhsScalar, false) | (Broadcast::LhsScalar, true) => {
            Tensor::from_vec(operand_shape, vec![full.sum()]).expect("scalar reduce")
        }
        (Broadcast::RhsRow, true) => full.clone(),
        (Broadcast::RhsRow, false) => {
            let k = operand_shape[0];
            let rows = full.len() / k;
            let mut out = vec![0.0; k];
            for r in 0..rows {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += full.data()[r * k + j];
                }
            }
            Tensor::from_vec(operand_shape, out).expect("row reduce")
        }
    }
}

/// Apply `f` element-wise under the broadcast rule.
fn broadcast_zip(kind: Broadcast, lhs: &Tensor, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    match kind {
        Broadcast::Same => lhs.zip_map(rhs, f),
        Broadcast::RhsScalar => {
            let s = rhs.item();
            lhs.map(|a| f(a, s))
        }
        Broadcast::LhsScalar => {
            let s = lhs.item();
            rhs.map(|b| f(s, b))
        }
        Broadcast::RhsRow => {
            let k = rhs.len();
            let mut data = Vec::with_capacity(lhs.len());
            for (i, &a) in lhs.data().iter().enumerate() {
                data.push(f(a, rhs.data()[i % k]));
            }
            Tensor::from_vec(lhs.shape(), data).expect("broadcast zip")
        }
    }
}

impl Tape {
    fn unary(
        &mut self,
        x: Var,
        op: &'static str,
        forward: impl Fn(f64) -> f64,
        backward: impl Fn(f64, f64) -> f64 + 'static, // (input, grad_out) -> grad_in
    ) -> Result<Var, AdError> {
        let value = self.value(x).map(forward);
        self.push_op(
            value,
            op,
            &[x],
            Box::new(move |values, grad_out, sink| {
                if !sink.needs(x) {
                    return;
                }
                let input = &values[x.0];
                let contrib = Tensor::from_vec(
                    input.shape(),
                    input
                        .data()
                        .iter()
                        .zip(grad_out.data())
                        .map(|(&xi, &g)| backward(xi, g))
                        .collect(),
                )
                .expect("unary shape");
                sink.add(x, contrib);
            }),
        )
    }

    /// Unary op whose derivative is written in terms of the *output* value.
    fn unary_from_output(
        &mut self,
        x: Var,
        op: &'static str,
        forward: impl Fn(f64) -> f64,
        backward: impl Fn(f64, f64) -> f64 + 'static, // (output, grad_out) -> grad_in
    ) -> Result<Var, AdError> {
        let value = self.value(x).map(forward);
        value.check_finite(op)?;
        let requires = self.requires_grad(x);
        if !requires {
            return Ok(self.push(value, op, false, false, None));
        }
        let out_slot = self.len();
        Ok(self.push(
            value,
            op,
            true,
            false,
            Some(Box::new(move |values, grad_out, sink| {
                if !sink.needs(x) {
                    return;
                }
                let out = &values[out_slot];
                let contrib = Tensor::from_vec(
                    out.shape(),
                    out.data()
                        .iter()
                        .zip(grad_out.data())
                        .map(|(&y, &g)| backward(y, g))
                        .collect(),
                )
                .expect("unary shape");
                sink.add(x, contrib);
            })),
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary_from_output(
            x,
            "sigmoid",
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            |y, g| g * y * (1.0 - y),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary_from_output(x, "tanh", f64::tanh, |y, g| g * (1.0 - y * y))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(x, "relu", |v| v.max(0.0), |xi, g| if xi > 0.0 { g } else { 0.0 })
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AdError> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(AdError::LogNonPositive { op: "log" });
        }
        self.unary(x, "log", f64::ln, |xi, g| g / xi)
    }

    pub fn one_minus(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(x, "one_minus", |v| 1.0 - v, |_, g| -g)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(x, "neg", |v| -v, |_, g| -g)
    }

    /// Clamp to `[lo, hi]`; the gradient passes only strictly inside the band.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AdError> {
        self.unary(
            x,
            "clamp",
            move |v| v.clamp(lo, hi),
            move |xi, g| if xi > lo && xi < hi { g } else { 0.0 },
        )
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var, AdError> {
        self.unary(x, "add_const", move |v| v + c, |_, g| g)
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Result<Var, AdError> {
        self.unary(x, "mul_const", move |v| v * c, move |_, g| g * c)
    }

    fn binary(
        &mut self,
        op: &'static str,
        lhs: Var,
        rhs: Var,
        forward: impl Fn(f64, f64) -> f64,
        // gradient factors w.r.t. lhs and rhs at full (lhs) shape
        lhs_grad: impl Fn(f64, f64, f64) -> f64 + 'static, // (a, b, g)
        rhs_grad: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Var, AdError> {
        let kind = classify(op, self.value(lhs), self.value(rhs))?;
        let value = broadcast_zip(kind, self.value(lhs), self.value(rhs), forward);
        self.push_op(
            value,
            op,
            &[lhs, rhs],
            Box::new(move |values, grad_out, sink| {
                let (a, b) = (&values[lhs.0], &values[rhs.0]);
                // Work at the full output shape, then reduce each side.
                let full_shape = if kind == Broadcast::LhsScalar { b } else { a };
                let expand = |t: &Tensor, i: usize| -> f64 {
                    match kind {
                        Broadcast::Same => t.data()[i],
                        Broadcast::RhsScalar | Broadcast::LhsScalar => {
                            if t.len() == 1 {
                                t.item()
                            } else {
                                t.data()[i]
                            }
                        }
                        Broadcast::RhsRow => {
                            if std::ptr::eq(t, b) {
                                t.data()[i % t.len()]
                            } else {
                                t.data()[i]
                            }
                        }
                    }
                };
                if sink.needs(lhs) {
                    let mut data = Vec::with_capacity(full_shape.len());
                    for (i, &g) in grad_out.data().iter().enumerate() {
                        data.push(lhs_grad(expand(a, i), expand(b, i), g));
                    }
                    let full = Tensor::from_vec(full_shape.shape(), data).expect("binary lhs");
                    sink.add(lhs, reduce_to(kind, true, &full, a.shape()));
                }
                if sink.needs(rhs) {
                    let mut data = Vec::with_capacity(full_shape.len());
                    for (i, &g) in grad_out.data().iter().enumerate() {
                        data.push(rhs_grad(expand(a, i), expand(b, i), g));
                    }
                    let full = Tensor::from_vec(full_shape.shape(), data).expect("binary rhs");
                    sink.add(rhs, reduce_to(kind, false, &full, b.shape()));
                }
            }),
        )
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, AdError> {
        self.binary("add", lhs, rhs, |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var, AdError> {
        self.binary("sub", lhs, rhs, |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var, AdError> {
        self.binary(
            "mul",
            lhs,
            rhs,
            |a, b| a * b,
            |_, b, g| g * b,
            |a, _, g| g * a,
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, AdError> {
        let value = Tensor::scalar(self.value(x).sum());
        let shape = self.value(x).shape().to_vec();
        self.push_op(
            value,
            "sum_all",
            &[x],
            Box::new(move |_, grad_out, sink| {
                if sink.needs(x) {
                    sink.add(x, Tensor::filled(&shape, grad_out.item()));
                }
            }),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, AdError> {
        let n = self.value(x).len() as f64;
        let value = Tensor::scalar(self.value(x).sum() / n);
        let shape = self.value(x).shape().to_vec();
        self.push_op(
            value,
            "mean_all",
            &[x],
            Box::new(move |_, grad_out, sink| {
                if sink.needs(x) {
                    sink.add(x, Tensor::filled(&shape, grad_out.item() / n));
                }
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        let value = self.value(x).reshaped(shape)?;
        let orig = self.value(x).shape().to_vec();
        self.push_op(
            value,
            "reshape",
            &[x],
            Box::new(move |_, grad_out, sink| {
                if sink.needs(x) {
                    sink.add(x, grad_out.reshaped(&orig).expect("reshape back"));
                }
            }),
        )
    }

    /// `x[B, I] . w[I, O]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, AdError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(shape_mismatch("matmul", xv, wv));
        }
        let (bs, ind, outd) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
        let mut out = vec![0.0; bs * outd];
        gemm(bs, ind, outd, xv.data(), false, wv.data(), false, &mut out);
        let value = Tensor::from_vec(&[bs, outd], out)?;
        self.push_op(
            value,
            "matmul",
            &[x, w],
            Box::new(move |values, grad_out, sink| {
                let (xv, wv) = (&values[x.0], &values[w.0]);
                if sink.needs(x) {
                    let mut dx = vec![0.0; bs * ind];
                    gemm(bs, outd, ind, grad_out.data(), false, wv.data(), true, &mut dx);
                    sink.add(x, Tensor::from_vec(&[bs, ind], dx).expect("matmul dx"));
                }
                if sink.needs(w) {
                    let mut dw = vec![0.0; ind * outd];
                    gemm(ind, bs, outd, xv.data(), true, grad_out.data(), false, &mut dw);
                    sink.add(w, Tensor::from_vec(&[ind, outd], dw).expect("matmul dw"));
                }
            }),
        )
    }

    /// Affine layer `x[B, I] . w[I, O] + b[O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AdError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(shape_mismatch("dense", xv, wv));
        }
        if bv.shape() != [wv.shape()[1]] {
            return Err(shape_mismatch("dense", wv, bv));
        }
        let (bs, ind, outd) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
        let mut out = vec![0.0; bs * outd];
        gemm(bs, ind, outd, xv.data(), false, wv.data(), false, &mut out);
        for r in 0..bs {
            for (o, bias) in bv.data().iter().enumerate() {
                out[r * outd + o] += bias;
            }
        }
        let value = Tensor::from_vec(&[bs, outd], out)?;
        self.push_op(
            value,
            "dense",
            &[x, w, b],
            Box::new(move |values, grad_out, sink| {
                let (xv, wv) = (&values[x.0], &values[w.0]);
                if sink.needs(x) {
                    let mut dx = vec![0.0; bs * ind];
                    gemm(bs, outd, ind, grad_out.data(), false, wv.data(), true, &mut dx);
                    sink.add(x, Tensor::from_vec(&[bs, ind], dx).expect("dense dx"));
                }
                if sink.needs(w) {
                    let mut dw = vec![0.0; ind * outd];
                    gemm(ind, bs, outd, xv.data(), true, grad_out.data(), false, &mut dw);
                    sink.add(w, Tensor::from_vec(&[ind, outd], dw).expect("dense dw"));
                }
                if sink.needs(b) {
                    let mut db = vec![0.0; outd];
                    for r in 0..bs {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += grad_out.data()[r * outd + o];
                        }
                    }
                    sink.add(b, Tensor::from_vec(&[outd], db).expect("dense db"));
                }
            }),
        )
    }

    /// 3x3 convolution with "same" zero padding and stride 1.
    ///
    /// `x` is `[B, C_in, H, W]`, `kernels` is `[C_out, C_in, 3, 3]`, `bias`
    /// is `[C_out]`; the output keeps the spatial dimensions.
    pub fn conv2d_same(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var, AdError> {
        let (xv, kv, bv) = (self.value(x), self.value(kernels), self.value(bias));
        if xv.shape().len() != 4 {
            return Err(bad_shape("conv2d_same", "[B, C, H, W] input", xv));
        }
        if kv.shape().len() != 4 || kv.shape()[2] != KERNEL || kv.shape()[3] != KERNEL {
            return Err(bad_shape("conv2d_same", "[C_out, C_in, 3, 3] kernels", kv));
        }
        let (bs, c_in, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let c_out = kv.shape()[0];
        if kv.shape()[1] != c_in {
            return Err(shape_mismatch("conv2d_same", xv, kv));
        }
        if bv.shape() != [c_out] {
            return Err(shape_mismatch("conv2d_same", kv, bv));
        }
        let hw = h * w;
        let patch = c_in * KERNEL * KERNEL;
        let mut out = vec![0.0; bs * c_out * hw];
        {
            let xdata = xv.data();
            let kdata = kv.data();
            let bdata = bv.data();
            out.par_chunks_mut(c_out * hw).enumerate().for_each(|(b, out_b)| {
                let cols = im2col(&xdata[b * c_in * hw..(b + 1) * c_in * hw], c_in, h, w);
                gemm(c_out, patch, hw, kdata, false, &cols, false, out_b);
                for o in 0..c_out {
                    let bias_o = bdata[o];
                    for v in &mut out_b[o * hw..(o + 1) * hw] {
                        *v += bias_o;
                    }
                }
            });
        }
        let value = Tensor::from_vec(&[bs, c_out, h, w], out)?;
        self.push_op(
            value,
            "conv2d_same",
            &[x, kernels, bias],
            Box::new(move |values, grad_out, sink| {
                let (xv, kv) = (&values[x.0], &values[kernels.0]);
                let g = grad_out.data();
                if sink.needs(bias) {
                    let mut db = vec![0.0; c_out];
                    for b in 0..bs {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += g[(b * c_out + o) * hw..(b * c_out + o + 1) * hw]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                    sink.add(bias, Tensor::from_vec(&[c_out], db).expect("conv db"));
                }
                if sink.needs(kernels) {
                    // Per-sample partials, reduced in index order so the
                    // result does not depend on thread scheduling.
                    let partials: Vec<Vec<f64>> = (0..bs)
                        .into_par_iter()
                        .map(|b| {
                            let cols =
                                im2col(&xv.data()[b * c_in * hw..(b + 1) * c_in * hw], c_in, h, w);
                            let mut dk = vec![0.0; c_out * patch];
                            gemm(
                                c_out,
                                hw,
                                patch,
                                &g[b * c_out * hw..(b + 1) * c_out * hw],
                                false,
                                &cols,
                                true,
                                &mut dk,
                            );
                            dk
                        })
                        .collect();
                    let mut dk = vec![0.0; c_out * patch];
                    for p in partials {
                        for (a, v) in dk.iter_mut().zip(p) {
                            *a += v;
                        }
                    }
                    sink.add(
                        kernels,
                        Tensor::from_vec(&[c_out, c_in, KERNEL, KERNEL], dk).expect("conv dk"),
                    );
                }
                if sink.needs(x) {
                    let mut dx = vec![0.0; bs * c_in * hw];
                    dx.par_chunks_mut(c_in * hw).enumerate().for_each(|(b, dx_b)| {
                        let mut colgrad = vec![0.0; patch * hw];
                        gemm(
                            patch,
                            c_out,
                            hw,
                            kv.data(),
                            true,
                            &g[b * c_out * hw..(b + 1) * c_out * hw],
                            false,
                            &mut colgrad,
                        );
                        col2im(&colgrad, c_in, h, w, dx_b);
                    });
                    sink.add(x, Tensor::from_vec(&[bs, c_in, h, w], dx).expect("conv dx"));
                }
            }),
        )
    }

    /// Batch normalization over `(B, H, W)` per channel.
    ///
    /// Train mode standardizes with the batch statistics (epsilon `1e-5`)
    /// and folds them into `stats` with momentum 0.1; eval mode uses the
    /// accumulated running statistics and fails if none exist yet.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats,
        train: bool,
    ) -> Result<Var, AdError> {
        const EPS: f64 = 1e-5;
        const MOMENTUM: f64 = 0.1;
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(bad_shape("batchnorm2d", "[B, C, H, W] input", xv));
        }
        let (bs, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(shape_mismatch("batchnorm2d", xv, self.value(gamma)));
        }
        if stats.channels() != c {
            return Err(AdError::Invalid {
                op: "batchnorm2d",
                msg: format!("running stats hold {} channels, input has {c}", stats.channels()),
            });
        }
        let m = bs * h * w;
        let hw = h * w;
        let (mean, inv_std): (Vec<f64>, Vec<f64>) = if train {
            if m < 2 {
                return Err(AdError::Invalid {
                    op: "batchnorm2d",
                    msg: format!("train mode needs B*H*W >= 2, got {m}"),
                });
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut acc = 0.0;
                for b in 0..bs {
                    let base = (b * c + ch) * hw;
                    acc += xv.data()[base..base + hw].iter().sum::<f64>();
                }
                mean[ch] = acc / m as f64;
                let mut vacc = 0.0;
                for b in 0..bs {
                    let base = (b * c + ch) * hw;
                    for &v in &xv.data()[base..base + hw] {
                        let d = v - mean[ch];
                        vacc += d * d;
                    }
                }
                var[ch] = vacc / m as f64;
            }
            for ch in 0..c {
                stats.running_mean[ch] = (1.0 - MOMENTUM) * stats.running_mean[ch] + MOMENTUM * mean[ch];
                stats.running_var[ch] = (1.0 - MOMENTUM) * stats.running_var[ch] + MOMENTUM * var[ch];
            }
            stats.updates += 1;
            let inv_std = var.iter().map(|&v| 1.0 / (v + EPS).sqrt()).collect();
            (mean, inv_std)
        } else {
            if stats.updates == 0 {
                return Err(AdError::BnUninitialized);
            }
            let inv_std = stats
                .running_var
                .iter()
                .map(|&v| 1.0 / (v + EPS).sqrt())
                .collect();
            (stats.running_mean.clone(), inv_std)
        };
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; xv.len()];
        for b in 0..bs {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for i in 0..hw {
                    out[base + i] = (xv.data()[base + i] - mu) * is * ga + be;
                }
            }
        }
        let value = Tensor::from_vec(&[bs, c, h, w], out)?;
        let mean_c = mean;
        let inv_std_c = inv_std;
        self.push_op(
            value,
            "batchnorm2d",
            &[x, gamma, beta],
            Box::new(move |values, grad_out, sink| {
                let xv = &values[x.0];
                let gv = values[gamma.0].data();
                let g = grad_out.data();
                let x_hat = |b: usize, ch: usize, i: usize| -> f64 {
                    (xv.data()[(b * c + ch) * hw + i] - mean_c[ch]) * inv_std_c[ch]
                };
                if sink.needs(beta) {
                    let mut db = vec![0.0; c];
                    for b in 0..bs {
                        for ch in 0..c {
                            db[ch] += g[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    sink.add(beta, Tensor::from_vec(&[c], db).expect("bn dbeta"));
                }
                if sink.needs(gamma) {
                    let mut dg = vec![0.0; c];
                    for b in 0..bs {
                        for ch in 0..c {
                            for i in 0..hw {
                                dg[ch] += g[(b * c + ch) * hw + i] * x_hat(b, ch, i);
                            }
                        }
                    }
                    sink.add(gamma, Tensor::from_vec(&[c], dg).expect("bn dgamma"));
                }
                if sink.needs(x) {
                    let mut dx = vec![0.0; xv.len()];
                    if train {
                        // Full batch-norm gradient with the mean/variance terms.
                        for ch in 0..c {
                            let mut sum_g = 0.0;
                            let mut sum_gx = 0.0;
                            for b in 0..bs {
                                for i in 0..hw {
                                    let gi = g[(b * c + ch) * hw + i];
                                    sum_g += gi;
                                    sum_gx += gi * x_hat(b, ch, i);
                                }
                            }
                            let mean_g = sum_g / m as f64;
                            let mean_gx = sum_gx / m as f64;
                            let scale = gv[ch] * inv_std_c[ch];
                            for b in 0..bs {
                                for i in 0..hw {
                                    let idx = (b * c + ch) * hw + i;
                                    dx[idx] = scale * (g[idx] - mean_g - x_hat(b, ch, i) * mean_gx);
                                }
                            }
                        }
                    } else {
                        for b in 0..bs {
                            for ch in 0..c {
                                let scale = gv[ch] * inv_std_c[ch];
                                for i in 0..hw {
                                    let idx = (b * c + ch) * hw + i;
                                    dx[idx] = g[idx] * scale;
                                }
                            }
                        }
                    }
                    sink.add(x, Tensor::from_vec(&[bs, c, h, w], dx).expect("bn dx"));
                }
            }),
        )
    }

    /// Non-overlapping 2x2 max pooling; gradients route to the argmax cell,
    /// first in row-major window order on exact ties.
    pub fn maxpool_2x2(&mut self, x: Var) -> Result<Var, AdError> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(bad_shape("maxpool_2x2", "[B, C, H, W] input", xv));
        }
        let (bs, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AdError::Invalid {
                op: "maxpool_2x2",
                msg: format!("spatial dims must be even, got {h}x{w}"),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; bs * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for b in 0..bs {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let iy = oy * 2 + dy;
                                let ix = ox * 2 + dx;
                                let idx = ((b * c + ch) * h + iy) * w + ix;
                                if xv.data()[idx] > best {
                                    best = xv.data()[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o_idx = ((b * c + ch) * oh + oy) * ow + ox;
                        out[o_idx] = best;
                        argmax[o_idx] = best_idx as u32;
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[bs, c, oh, ow], out)?;
        let in_len = xv.len();
        let in_shape = xv.shape().to_vec();
        self.push_op(
            value,
            "maxpool_2x2",
            &[x],
            Box::new(move |_, grad_out, sink| {
                if !sink.needs(x) {
                    return;
                }
                let mut dx = vec![0.0; in_len];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src as usize] += grad_out.data()[o];
                }
                sink.add(x, Tensor::from_vec(&in_shape, dx).expect("maxpool dx"));
            }),
        )
    }

    /// Extract time step `t` from a `[B, C, H, W]` feature map as a
    /// `[B, C*H]` step vector (the recurrent input layout).
    pub fn time_slice(&mut self, x: Var, t: usize) -> Result<Var, AdError> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(bad_shape("time_slice", "[B, C, H, W] input", xv));
        }
        let (bs, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if t >= w {
            return Err(AdError::Invalid {
                op: "time_slice",
                msg: format!("step {t} out of {w}"),
            });
        }
        let step = c * h;
        let mut out = vec![0.0; bs * step];
        for b in 0..bs {
            for ch in 0..c {
                for y in 0..h {
                    out[b * step + ch * h + y] = xv.data()[((b * c + ch) * h + y) * w + t];
                }
            }
        }
        let value = Tensor::from_vec(&[bs, step], out)?;
        let in_shape = xv.shape().to_vec();
        let in_len = xv.len();
        self.push_op(
            value,
            "time_slice",
            &[x],
            Box::new(move |_, grad_out, sink| {
                if !sink.needs(x) {
                    return;
                }
                let mut dx = vec![0.0; in_len];
                for b in 0..bs {
                    for ch in 0..c {
                        for y in 0..h {
                            dx[((b * c + ch) * h + y) * w + t] =
                                grad_out.data()[b * step + ch * h + y];
                        }
                    }
                }
                sink.add(x, Tensor::from_vec(&in_shape, dx).expect("time_slice dx"));
            }),
        )
    }

    /// Test fixture: forward multiplies by `c` but the recorded backward is
    /// deliberately wrong, for the gradient-checker negative control.
    #[cfg(test)]
    pub(crate) fn mul_const_corrupted(&mut self, x: Var, c: f64) -> Result<Var, AdError> {
        self.unary(x, "mul_const_corrupted", move |v| v * c, move |_, g| g * c * 0.5)
    }
}

/// Unfold a `[C, H, W]` sample into `[C*9, H*W]` patch columns with zero
/// padding 1 on each side.
fn im2col(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; c * KERNEL * KERNEL * hw];
    for ch in 0..c {
        for dy in 0..KERNEL {
            for dx in 0..KERNEL {
                let row = (ch * KERNEL + dy) * KERNEL + dx;
                let out_row = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let iy = y as isize + dy as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = (ch * h + iy as usize) * w;
                    let dst_base = y * w;
                    for xx in 0..w {
                        let ix = xx as isize + dx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out_row[dst_base + xx] = x[src_base + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Fold patch-column gradients back onto the input (scatter-add), the
/// adjoint of [`im2col`].
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        for dy in 0..KERNEL {
            for dx in 0..KERNEL {
                let row = (ch * KERNEL + dy) * KERNEL + dx;
                let col_row = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let iy = y as isize + dy as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (ch * h + iy as usize) * w;
                    let src_base = y * w;
                    for xx in 0..w {
                        let ix = xx as isize + dx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[dst_base + ix as usize] += col_row[src_base + xx];
                    }
                }
            }
        }
    }
}
