//! One convolutional block: conv → BN → ReLU, conv → BN → ReLU, 2x2 max
//! pool. Spatial dimensions are exactly halved.

use crate::autodiff::{AdError, BoundParams, ParamStore, Tape, Var};

/// Parameter names a block owns under its `prefix` (e.g. `block0`):
/// `conv1.w`, `conv1.b`, `bn1.gamma`, `bn1.beta`, the `bn1` stats buffer,
/// and the same for the `2` pair.
pub fn conv_block_forward(
    tape: &mut Tape,
    x: Var,
    bound: &BoundParams,
    store: &mut ParamStore,
    prefix: &str,
    train_bn: bool,
) -> Result<Var, AdError> {
    let mut out = x;
    for half in 1..=2 {
        let w = bound.get(&format!("{prefix}.conv{half}.w"))?;
        let b = bound.get(&format!("{prefix}.conv{half}.b"))?;
        let gamma = bound.get(&format!("{prefix}.bn{half}.gamma"))?;
        let beta = bound.get(&format!("{prefix}.bn{half}.beta"))?;
        out = tape.conv2d_same(out, w, b)?;
        let bn_name = format!("{prefix}.bn{half}");
        let mut stats = store.take_bn(&bn_name).ok_or(AdError::Invalid {
            op: "conv_block_forward",
            msg: format!("missing bn stats {bn_name}"),
        })?;
        let bn = tape.batchnorm2d(out, gamma, beta, &mut stats, train_bn);
        store.put_bn(&bn_name, stats);
        out = tape.relu(bn?)?;
    }
    tape.maxpool_2x2(out)
}
