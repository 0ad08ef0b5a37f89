//! Network assembly: parameter initialization, the batched forward pass,
//! and the fine-tuning transfer/freeze protocol.

use super::blocks::conv_block_forward;
use super::lstm::{hinf_lstm_step, standard_lstm_step, CellState, LstmGateVars};
use super::{CellMode, LambdaMode, ModelConfig, ModelError, ShapeReport};
use crate::autodiff::{
    copy_allowed, orthogonal, uniform_fan_in, BoundParams, ParamStore, Tape, Tensor, Var,
};
use crate::mel::MelSpectrogram;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The CNN + recurrent classifier with its parameter store.
#[derive(Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub shape: ShapeReport,
}

impl Model {
    /// Seeded initialization: convolution and dense weights uniform scaled
    /// by `1/sqrt(fan_in)`, recurrent matrices orthogonal, biases zero, and
    /// `k_filter` zero so the retention blend starts at one half.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let shape = cfg.shape_report()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut c_in = 1usize;
        for (i, &c_out) in cfg.conv_blocks.iter().enumerate() {
            for half in 1..=2 {
                let cin = if half == 1 { c_in } else { c_out };
                store.add_param(
                    &format!("block{i}.conv{half}.w"),
                    uniform_fan_in(&[c_out, cin, 3, 3], cin * 9, &mut rng),
                    true,
                );
                store.add_param(&format!("block{i}.conv{half}.b"), Tensor::zeros(&[c_out]), true);
                store.add_param(
                    &format!("block{i}.bn{half}.gamma"),
                    Tensor::filled(&[c_out], 1.0),
                    true,
                );
                store.add_param(&format!("block{i}.bn{half}.beta"), Tensor::zeros(&[c_out]), true);
                store.add_bn(&format!("block{i}.bn{half}"), c_out);
            }
            c_in = c_out;
        }
        let (d, h) = (shape.step_dim, cfg.hidden_size);
        let hinf = cfg.cell_mode == CellMode::HInfinity;
        for gate in ["i", "f", "o", "c"] {
            // Forget-gate parameters exist in both modes so checkpoints
            // interoperate; the H∞ cell keeps them frozen and unused.
            let trainable = !(hinf && gate == "f");
            store.add_param(
                &format!("lstm.w_{gate}"),
                uniform_fan_in(&[d, h], d, &mut rng),
                trainable,
            );
            store.add_param(&format!("lstm.u_{gate}"), orthogonal(h, &mut rng), trainable);
            store.add_param(&format!("lstm.b_{gate}"), Tensor::zeros(&[h]), trainable);
        }
        let k_shape = match cfg.lambda_mode {
            LambdaMode::Scalar => vec![1],
            LambdaMode::PerUnit => vec![h],
        };
        store.add_param("lstm.k_filter", Tensor::zeros(&k_shape), hinf);
        store.add_param("head.w", uniform_fan_in(&[h, 1], h, &mut rng), true);
        store.add_param("head.b", Tensor::zeros(&[1]), true);
        Ok(Model { cfg, store, shape })
    }

    /// Assemble a `[B, 1, n_mels, n_frames]` input tensor from spectrograms.
    pub fn input_tensor(&self, batch: &[&MelSpectrogram]) -> Result<Tensor, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        let (rows, cols) = (self.cfg.n_mels, self.cfg.n_frames);
        let mut data = Vec::with_capacity(batch.len() * rows * cols);
        for (i, m) in batch.iter().enumerate() {
            if m.n_mels != rows || m.n_frames != cols {
                return Err(ModelError::Input(format!(
                    "spectrogram {i} is {}x{}, model expects {rows}x{cols}",
                    m.n_mels, m.n_frames
                )));
            }
            data.extend(m.values.iter().map(|&v| v as f64));
        }
        Tensor::from_vec(&[batch.len(), 1, rows, cols], data).map_err(ModelError::from)
    }

    /// Zero-pad the frame (and, if needed, mel) axes on the right/bottom up
    /// to the padded shape from the shape report.
    fn pad_input(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let s = input.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(ModelError::Input(format!(
                "expected [B, 1, mel, frames], got {s:?}"
            )));
        }
        if (s[2], s[3]) != self.shape.input {
            return Err(ModelError::Input(format!(
                "input grid {}x{} does not match configured {}x{}",
                s[2], s[3], self.shape.input.0, self.shape.input.1
            )));
        }
        let (ph, pw) = self.shape.padded;
        let (b, h, w) = (s[0], s[2], s[3]);
        if (h, w) == (ph, pw) {
            return Ok(input.clone());
        }
        let mut out = Tensor::zeros(&[b, 1, ph, pw]);
        for bi in 0..b {
            for y in 0..h {
                let src = (bi * h + y) * w;
                let dst = (bi * ph + y) * pw;
                out.data_mut()[dst..dst + w].copy_from_slice(&input.data()[src..src + w]);
            }
        }
        Ok(out)
    }

    /// Batched forward pass; returns per-sample probabilities `[B]` and the
    /// parameter binding (for gradient collection after `backward`).
    ///
    /// `train` selects batch-norm mode; blocks whose parameters are frozen
    /// always run their batch norm with running statistics.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        input: &Tensor,
        train: bool,
    ) -> Result<(Var, BoundParams), ModelError> {
        let padded = self.pad_input(input)?;
        let batch = padded.shape()[0];
        let bound = self.store.bind(tape);
        let mut x = tape.constant(padded);
        for i in 0..self.cfg.conv_blocks.len() {
            let prefix = format!("block{i}");
            let frozen = !self
                .store
                .param(&format!("{prefix}.bn1.gamma"))
                .map(|p| p.trainable)
                .unwrap_or(true);
            let train_bn = train && !frozen;
            x = conv_block_forward(tape, x, &bound, &mut self.store, &prefix, train_bn)?;
        }
        let gates = LstmGateVars::from_bound(&bound)?;
        let hidden = self.cfg.hidden_size;
        let mut state = CellState {
            h: tape.constant(Tensor::zeros(&[batch, hidden])),
            c: tape.constant(Tensor::zeros(&[batch, hidden])),
        };
        for t in 0..self.shape.seq_len {
            let step = tape.time_slice(x, t)?;
            state = match self.cfg.cell_mode {
                CellMode::Standard => standard_lstm_step(tape, step, &state, &gates)?,
                CellMode::HInfinity => hinf_lstm_step(tape, step, &state, &gates)?,
            };
        }
        let logits = tape.dense(state.h, bound.get("head.w")?, bound.get("head.b")?)?;
        let probs = tape.sigmoid(logits)?;
        let flat = tape.reshape(probs, &[batch])?;
        Ok((flat, bound))
    }

    /// Convenience scoring pass: probabilities for a slice of spectrograms,
    /// in order, using eval-mode batch norm.
    pub fn score(
        &mut self,
        batch: &[&MelSpectrogram],
        batch_size: usize,
    ) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(batch_size.max(1)) {
            let input = self.input_tensor(chunk)?;
            let mut tape = Tape::new();
            let (probs, _) = self.forward(&mut tape, &input, false)?;
            out.extend_from_slice(tape.value(probs).data());
        }
        Ok(out)
    }
}

/// Fine-tuning transfer: copy the convolutional stack (parameters, batch
/// norm affine terms and running statistics) and the head from a trained
/// source store into a freshly initialized target model, freeze the copied
/// convolutional stack, and leave the recurrent parameters and `k_filter`
/// newly initialized and trainable.
pub fn transfer_and_freeze(
    source: &ParamStore,
    source_cfg: &ModelConfig,
    target_cfg: ModelConfig,
    seed: u64,
) -> Result<Model, ModelError> {
    if source_cfg.conv_blocks != target_cfg.conv_blocks {
        return Err(ModelError::Config(format!(
            "conv stacks differ: source {:?} vs target {:?}",
            source_cfg.conv_blocks, target_cfg.conv_blocks
        )));
    }
    if source_cfg.hidden_size != target_cfg.hidden_size {
        return Err(ModelError::Config(format!(
            "head shapes differ: source hidden {} vs target {}",
            source_cfg.hidden_size, target_cfg.hidden_size
        )));
    }
    if (source_cfg.n_mels, source_cfg.n_frames) != (target_cfg.n_mels, target_cfg.n_frames) {
        return Err(ModelError::Config("input grids differ".into()));
    }
    let mut model = Model::new(target_cfg, seed)?;
    let mut conv_params = Vec::new();
    let mut bn_buffers = Vec::new();
    for i in 0..model.cfg.conv_blocks.len() {
        for half in 1..=2 {
            conv_params.push(format!("block{i}.conv{half}.w"));
            conv_params.push(format!("block{i}.conv{half}.b"));
            conv_params.push(format!("block{i}.bn{half}.gamma"));
            conv_params.push(format!("block{i}.bn{half}.beta"));
            bn_buffers.push(format!("block{i}.bn{half}"));
        }
    }
    let head_params = vec!["head.w".to_string(), "head.b".to_string()];
    copy_allowed(&mut model.store, source, &conv_params, &bn_buffers)?;
    copy_allowed(&mut model.store, source, &head_params, &[])?;
    for name in &conv_params {
        model.store.set_trainable(name, false);
    }
    Ok(model)
}
