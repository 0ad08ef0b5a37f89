//! Recurrent cells: the standard LSTM step and the H∞-gated variant that
//! replaces the forget gate with a learned retention blend.

use crate::autodiff::{AdError, BoundParams, Tape, Var};

/// Per-step recurrent state, `[batch, hidden]` each.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

/// Tape handles of the recurrent parameters.
///
/// Both cells share one parameter layout so checkpoints interoperate; the
/// H∞ cell simply never evaluates the forget-gate weights.
pub struct LstmGateVars {
    pub w_i: Var,
    pub u_i: Var,
    pub b_i: Var,
    pub w_f: Var,
    pub u_f: Var,
    pub b_f: Var,
    pub w_o: Var,
    pub u_o: Var,
    pub b_o: Var,
    pub w_c: Var,
    pub u_c: Var,
    pub b_c: Var,
    /// Pre-activation robustness parameter; `lambda_h = sigmoid(k_filter)`.
    pub k_filter: Var,
}

impl LstmGateVars {
    pub fn from_bound(bound: &BoundParams) -> Result<Self, AdError> {
        Ok(LstmGateVars {
            w_i: bound.get("lstm.w_i")?,
            u_i: bound.get("lstm.u_i")?,
            b_i: bound.get("lstm.b_i")?,
            w_f: bound.get("lstm.w_f")?,
            u_f: bound.get("lstm.u_f")?,
            b_f: bound.get("lstm.b_f")?,
            w_o: bound.get("lstm.w_o")?,
            u_o: bound.get("lstm.u_o")?,
            b_o: bound.get("lstm.b_o")?,
            w_c: bound.get("lstm.w_c")?,
            u_c: bound.get("lstm.u_c")?,
            b_c: bound.get("lstm.b_c")?,
            k_filter: bound.get("lstm.k_filter")?,
        })
    }
}

fn gate_preact(
    tape: &mut Tape,
    x: Var,
    h: Var,
    w: Var,
    u: Var,
    b: Var,
) -> Result<Var, AdError> {
    let xin = tape.dense(x, w, b)?;
    let rec = tape.matmul(h, u)?;
    tape.add(xin, rec)
}

/// One standard LSTM step:
/// `i = σ(W_i x + U_i h + b_i)`, `f`, `o` analogous,
/// `c~ = tanh(W_c x + U_c h + b_c)`,
/// `c' = f ⊙ c + i ⊙ c~`, `h' = o ⊙ tanh(c')`.
pub fn standard_lstm_step(
    tape: &mut Tape,
    x: Var,
    state: &CellState,
    p: &LstmGateVars,
) -> Result<CellState, AdError> {
    let i_pre = gate_preact(tape, x, state.h, p.w_i, p.u_i, p.b_i)?;
    let i = tape.sigmoid(i_pre)?;
    let f_pre = gate_preact(tape, x, state.h, p.w_f, p.u_f, p.b_f)?;
    let f = tape.sigmoid(f_pre)?;
    let o_pre = gate_preact(tape, x, state.h, p.w_o, p.u_o, p.b_o)?;
    let o = tape.sigmoid(o_pre)?;
    let c_pre = gate_preact(tape, x, state.h, p.w_c, p.u_c, p.b_c)?;
    let c_tilde = tape.tanh(c_pre)?;
    let retain = tape.mul(f, state.c)?;
    let update = tape.mul(i, c_tilde)?;
    let c = tape.add(retain, update)?;
    let c_act = tape.tanh(c)?;
    let h = tape.mul(o, c_act)?;
    Ok(CellState { h, c })
}

/// One H∞-gated step: the input and output gates and the candidate state
/// follow the standard cell, the forget-gate path is not computed, and the
/// cell state blends through the learned retention coefficient:
/// `λ = σ(k_filter)`, `c' = (1-λ) ⊙ c + λ ⊙ (i ⊙ c~)`, `h' = o ⊙ tanh(c')`.
pub fn hinf_lstm_step(
    tape: &mut Tape,
    x: Var,
    state: &CellState,
    p: &LstmGateVars,
) -> Result<CellState, AdError> {
    let i_pre = gate_preact(tape, x, state.h, p.w_i, p.u_i, p.b_i)?;
    let i = tape.sigmoid(i_pre)?;
    let o_pre = gate_preact(tape, x, state.h, p.w_o, p.u_o, p.b_o)?;
    let o = tape.sigmoid(o_pre)?;
    let c_pre = gate_preact(tape, x, state.h, p.w_c, p.u_c, p.b_c)?;
    let c_tilde = tape.tanh(c_pre)?;
    let lambda = tape.sigmoid(p.k_filter)?;
    let one_minus_lambda = tape.one_minus(lambda)?;
    let retain = tape.mul(state.c, one_minus_lambda)?;
    let update_raw = tape.mul(i, c_tilde)?;
    let update = tape.mul(update_raw, lambda)?;
    let c = tape.add(retain, update)?;
    let c_act = tape.tanh(c)?;
    let h = tape.mul(o, c_act)?;
    Ok(CellState { h, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, orthogonal, uniform_fan_in, ParamStore, Tape, Tensor};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn lstm_store(
        input_dim: usize,
        hidden: usize,
        per_unit_lambda: bool,
        rng: &mut ChaCha8Rng,
    ) -> ParamStore {
        let mut store = ParamStore::new();
        for gate in ["i", "f", "o", "c"] {
            store.add_param(
                &format!("lstm.w_{gate}"),
                uniform_fan_in(&[input_dim, hidden], input_dim, rng),
                true,
            );
            store.add_param(&format!("lstm.u_{gate}"), orthogonal(hidden, rng), true);
            store.add_param(&format!("lstm.b_{gate}"), Tensor::zeros(&[hidden]), true);
        }
        let k_shape = if per_unit_lambda { vec![hidden] } else { vec![1] };
        store.add_param("lstm.k_filter", Tensor::zeros(&k_shape), true);
        store
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = lstm_store(3, 4, false, &mut rng);
        for name in store.params().iter().map(|p| p.name.clone()).collect::<Vec<_>>() {
            let p = store.param_mut(&name).unwrap();
            p.value = Tensor::zeros(p.value.shape());
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let p = LstmGateVars::from_bound(&bound).unwrap();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let state = CellState {
            h: tape.constant(Tensor::zeros(&[2, 4])),
            c: tape.constant(Tensor::zeros(&[2, 4])),
        };
        let next = standard_lstm_step(&mut tape, x, &state, &p).unwrap();
        assert!(tape.value(next.c).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(next.h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_memorize_previous_cell() {
        // b_f = +10 (f ~ 1), b_i = -10 (i ~ 0): c' ~ c within 1e-4.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = lstm_store(3, 4, false, &mut rng);
        store.param_mut("lstm.b_f").unwrap().value = Tensor::filled(&[4], 10.0);
        store.param_mut("lstm.b_i").unwrap().value = Tensor::filled(&[4], -10.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let p = LstmGateVars::from_bound(&bound).unwrap();
        let x = tape.constant(random_tensor(&[2, 3], &mut rng));
        let c_prev = random_tensor(&[2, 4], &mut rng);
        let state = CellState {
            h: tape.constant(Tensor::zeros(&[2, 4])),
            c: tape.constant(c_prev.clone()),
        };
        let next = standard_lstm_step(&mut tape, x, &state, &p).unwrap();
        assert!(tape.value(next.c).max_abs_diff(&c_prev) < 1e-4);
    }

    #[test]
    fn hinf_limiting_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, expect_retention) in [(-30.0, true), (30.0, false)] {
            let mut store = lstm_store(3, 4, false, &mut rng);
            store.param_mut("lstm.k_filter").unwrap().value = Tensor::scalar(k);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let p = LstmGateVars::from_bound(&bound).unwrap();
            let x = tape.constant(random_tensor(&[2, 3], &mut rng));
            let c_prev = random_tensor(&[2, 4], &mut rng);
            let state = CellState {
                h: tape.constant(random_tensor(&[2, 4], &mut rng)),
                c: tape.constant(c_prev.clone()),
            };
            let next = hinf_lstm_step(&mut tape, x, &state, &p).unwrap();
            if expect_retention {
                // lambda -> 0: pure retention.
                assert!(tape.value(next.c).max_abs_diff(&c_prev) < 1e-9);
            } else {
                // lambda -> 1: pure replacement by i (.) c~.
                let i_pre = gate_preact(&mut tape, x, state.h, p.w_i, p.u_i, p.b_i).unwrap();
                let i = tape.sigmoid(i_pre).unwrap();
                let c_pre = gate_preact(&mut tape, x, state.h, p.w_c, p.u_c, p.b_c).unwrap();
                let ct = tape.tanh(c_pre).unwrap();
                let expected = tape.mul(i, ct).unwrap();
                let diff = tape.value(next.c).max_abs_diff(tape.value(expected));
                assert!(diff < 1e-9);
            }
        }
    }

    /// Independent scalar re-computation of the H∞ step (no tape, no shared
    /// code) used to pin the blended update at `k_filter = 0`.
    fn scalar_hinf_oracle(
        x: &[f64],
        h: &[f64],
        c: &[f64],
        store: &ParamStore,
        input_dim: usize,
        hidden: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let get = |n: &str| store.param(n).unwrap().value.data();
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let gate = |w: &[f64], u: &[f64], b: &[f64], j: usize| -> f64 {
            let mut acc = b[j];
            for (k, &xv) in x.iter().enumerate().take(input_dim) {
                acc += xv * w[k * hidden + j];
            }
            for (k, &hv) in h.iter().enumerate().take(hidden) {
                acc += hv * u[k * hidden + j];
            }
            acc
        };
        let k_filter = get("lstm.k_filter");
        let mut c_next = vec![0.0; hidden];
        let mut h_next = vec![0.0; hidden];
        for j in 0..hidden {
            let i = sigmoid(gate(get("lstm.w_i"), get("lstm.u_i"), get("lstm.b_i"), j));
            let o = sigmoid(gate(get("lstm.w_o"), get("lstm.u_o"), get("lstm.b_o"), j));
            let ct = gate(get("lstm.w_c"), get("lstm.u_c"), get("lstm.b_c"), j).tanh();
            let lambda = sigmoid(if k_filter.len() == 1 { k_filter[0] } else { k_filter[j] });
            c_next[j] = (1.0 - lambda) * c[j] + lambda * i * ct;
            h_next[j] = o * c_next[j].tanh();
        }
        (h_next, c_next)
    }

    #[test]
    fn hinf_matches_scalar_oracle_at_k_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for per_unit in [false, true] {
            let store = lstm_store(5, 6, per_unit, &mut rng);
            let x = random_tensor(&[1, 5], &mut rng);
            let h0 = random_tensor(&[1, 6], &mut rng);
            let c0 = random_tensor(&[1, 6], &mut rng);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let p = LstmGateVars::from_bound(&bound).unwrap();
            let xv = tape.constant(x.clone());
            let state = CellState {
                h: tape.constant(h0.clone()),
                c: tape.constant(c0.clone()),
            };
            let next = hinf_lstm_step(&mut tape, xv, &state, &p).unwrap();
            let (h_exp, c_exp) = scalar_hinf_oracle(x.data(), h0.data(), c0.data(), &store, 5, 6);
            for j in 0..6 {
                assert!((tape.value(next.c).data()[j] - c_exp[j]).abs() < 1e-12);
                assert!((tape.value(next.h).data()[j] - h_exp[j]).abs() < 1e-12);
            }
        }
    }

    /// The H∞ step must equal a standard step whose forget gate is pinned to
    /// the constant `1 - lambda` and whose input gate is pinned to
    /// `lambda * i`.
    #[test]
    fn structural_equivalence_to_pinned_standard_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = lstm_store(4, 5, false, &mut rng);
        store.param_mut("lstm.k_filter").unwrap().value = Tensor::scalar(0.37);
        let x = random_tensor(&[3, 4], &mut rng);
        let h0 = random_tensor(&[3, 5], &mut rng);
        let c0 = random_tensor(&[3, 5], &mut rng);

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let p = LstmGateVars::from_bound(&bound).unwrap();
        let xv = tape.constant(x.clone());
        let state = CellState {
            h: tape.constant(h0.clone()),
            c: tape.constant(c0.clone()),
        };
        let hinf = hinf_lstm_step(&mut tape, xv, &state, &p).unwrap();

        // Pinned standard update, computed from the gate definitions.
        let i_pre = gate_preact(&mut tape, xv, state.h, p.w_i, p.u_i, p.b_i).unwrap();
        let i = tape.sigmoid(i_pre).unwrap();
        let o_pre = gate_preact(&mut tape, xv, state.h, p.w_o, p.u_o, p.b_o).unwrap();
        let o = tape.sigmoid(o_pre).unwrap();
        let c_pre = gate_preact(&mut tape, xv, state.h, p.w_c, p.u_c, p.b_c).unwrap();
        let c_tilde = tape.tanh(c_pre).unwrap();
        let lambda = 1.0 / (1.0 + (-0.37f64).exp());
        let f_pinned = tape.constant(Tensor::filled(&[3, 5], 1.0 - lambda));
        let i_pinned = tape.mul_const(i, lambda).unwrap();
        let retain = tape.mul(f_pinned, state.c).unwrap();
        let update = tape.mul(i_pinned, c_tilde).unwrap();
        let c_std = tape.add(retain, update).unwrap();
        let c_act = tape.tanh(c_std).unwrap();
        let h_std = tape.mul(o, c_act).unwrap();

        assert!(tape.value(hinf.c).max_abs_diff(tape.value(c_std)) < 1e-12);
        assert!(tape.value(hinf.h).max_abs_diff(tape.value(h_std)) < 1e-12);
    }

    #[test]
    fn three_step_unroll_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for hinf in [false, true] {
            let store = lstm_store(4, 5, false, &mut rng);
            let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&[2, 4], &mut rng)).collect();
            let xs_c = xs.clone();
            let mut build = move |tape: &mut Tape, s: &mut ParamStore| {
                let bound = s.bind(tape);
                let p = LstmGateVars::from_bound(&bound)?;
                let mut state = CellState {
                    h: tape.constant(Tensor::zeros(&[2, 5])),
                    c: tape.constant(Tensor::zeros(&[2, 5])),
                };
                for x in &xs_c {
                    let xv = tape.constant(x.clone());
                    state = if hinf {
                        hinf_lstm_step(tape, xv, &state, &p)?
                    } else {
                        standard_lstm_step(tape, xv, &state, &p)?
                    };
                }
                let loss = tape.mean_all(state.h)?;
                Ok((loss, bound))
            };
            let report = finite_diff_check(&store, &mut build, 1e-5, 1e-4).unwrap();
            let checked: Vec<_> = report
                .entries
                .iter()
                .filter(|e| {
                    // The standard cell never touches k_filter; the H∞ cell
                    // never touches the forget-gate parameters.
                    if hinf {
                        !e.name.contains("_f")
                    } else {
                        e.name != "lstm.k_filter"
                    }
                })
                .collect();
            assert!(
                checked.iter().all(|e| e.pass),
                "hinf={hinf}: {:?}",
                report.worst_first()[0]
            );
        }
    }

    #[test]
    fn k_filter_gradient_flows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut nonzero_seen = false;
        for seed in 0..5 {
            let mut inner = ChaCha8Rng::seed_from_u64(seed);
            let store = lstm_store(4, 5, false, &mut inner);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let p = LstmGateVars::from_bound(&bound).unwrap();
            let x = tape.constant(random_tensor(&[2, 4], &mut rng));
            let mut state = CellState {
                h: tape.constant(Tensor::zeros(&[2, 5])),
                c: tape.constant(random_tensor(&[2, 5], &mut rng)),
            };
            state = hinf_lstm_step(&mut tape, x, &state, &p).unwrap();
            let loss = tape.mean_all(state.h).unwrap();
            tape.backward(loss).unwrap();
            let k = bound.get("lstm.k_filter").unwrap();
            if tape.grad(k).map(|g| g.data()[0].abs() > 0.0) == Some(true) {
                nonzero_seen = true;
            }
        }
        assert!(nonzero_seen, "k_filter gradient vanished on every seed");
    }
}
