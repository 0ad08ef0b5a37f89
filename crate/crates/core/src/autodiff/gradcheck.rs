//! Central finite-difference verification of every analytic gradient.

use super::params::{BoundParams, ParamStore};
use super::{AdError, Tape, Var};

/// Builds a deterministic scalar loss from a fresh tape and a working copy
/// of the parameter store, returning the loss node and the parameter
/// binding used.
pub type LossBuilder<'a> =
    &'a mut dyn FnMut(&mut Tape, &mut ParamStore) -> Result<(Var, BoundParams), AdError>;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub step: f64,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// Entries sorted worst-first, for reporting offenders.
    pub fn worst_first(&self) -> Vec<&GradCheckEntry> {
        let mut v: Vec<&GradCheckEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.max_rel_err.partial_cmp(&a.max_rel_err).unwrap());
        v
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare analytic gradients of every trainable parameter against central
/// differences with step `h`, evaluated in 64-bit arithmetic.
///
/// The builder must be deterministic: it is re-run twice per parameter
/// element, each time on a pristine clone of `store` (so batch-norm running
/// statistics cannot drift between evaluations).
pub fn finite_diff_check(
    store: &ParamStore,
    build: LossBuilder,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport, AdError> {
    // Analytic pass.
    let mut working = store.clone();
    let mut tape = Tape::new();
    let (loss, bound) = build(&mut tape, &mut working)?;
    tape.backward(loss)?;
    let analytic: Vec<(String, Option<Vec<f64>>)> = bound
        .gradients(&tape)
        .into_iter()
        .map(|(n, g)| (n, g.map(|t| t.data().to_vec())))
        .collect();

    let mut eval = |perturb_name: &str, element: usize, delta: f64| -> Result<f64, AdError> {
        let mut s = store.clone();
        let p = s.param_mut(perturb_name).expect("parameter exists");
        p.value.data_mut()[element] += delta;
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, &mut s)?;
        Ok(tape.value(loss).item())
    };

    let mut entries = Vec::new();
    for p in store.params() {
        if !p.trainable {
            continue;
        }
        let grad = analytic
            .iter()
            .find(|(n, _)| n == &p.name)
            .and_then(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; p.value.len()]);
        let mut worst = 0.0f64;
        for e in 0..p.value.len() {
            let plus = eval(&p.name, e, h)?;
            let minus = eval(&p.name, e, -h)?;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_err(grad[e], numeric));
        }
        entries.push(GradCheckEntry {
            name: p.name.clone(),
            max_rel_err: worst,
            pass: worst <= tolerance,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance,
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tensor::Tensor;
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
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add_param("w", random_tensor(&[3, 4], &mut rng), true);
        store.add_param("b", random_tensor(&[4], &mut rng), true);
        let x = random_tensor(&[2, 3], &mut rng);
        let mut build = |tape: &mut Tape, s: &mut ParamStore| {
            let bound = s.bind(tape);
            let xv = tape.constant(x.clone());
            let y = tape.dense(xv, bound.get("w")?, bound.get("b")?)?;
            let sig = tape.sigmoid(y)?;
            let loss = tape.sum_all(sig)?;
            Ok((loss, bound))
        };
        let report = finite_diff_check(&store, &mut build, 1e-5, 1e-4).unwrap();
        assert!(report.all_pass(), "{:?}", report.worst_first()[0]);
    }

    #[test]
    fn corrupted_backward_is_reported() {
        let mut store = ParamStore::new();
        store.add_param("a", Tensor::from_vec(&[2], vec![0.4, -0.7]).unwrap(), true);
        let mut build = |tape: &mut Tape, s: &mut ParamStore| {
            let bound = s.bind(tape);
            let bad = tape.mul_const_corrupted(bound.get("a")?, 3.0)?;
            let loss = tape.sum_all(bad)?;
            Ok((loss, bound))
        };
        let report = finite_diff_check(&store, &mut build, 1e-5, 1e-4).unwrap();
        assert!(!report.all_pass());
        assert!(report.entries[0].max_rel_err > 0.1);
    }

    #[test]
    fn composed_gate_expression_checks_out() {
        // sigmoid(a) * tanh(b) + (1 - sigmoid(a)) * c
        let mut store = ParamStore::new();
        store.add_param("a", Tensor::scalar(0.37), true);
        store.add_param("b", Tensor::scalar(-0.81), true);
        store.add_param("c", Tensor::scalar(0.52), true);
        let mut build = |tape: &mut Tape, s: &mut ParamStore| {
            let bound = s.bind(tape);
            let sa = tape.sigmoid(bound.get("a")?)?;
            let tb = tape.tanh(bound.get("b")?)?;
            let left = tape.mul(sa, tb)?;
            let not_sa = tape.one_minus(sa)?;
            let right = tape.mul(not_sa, bound.get("c")?)?;
            let out = tape.add(left, right)?;
            let loss = tape.sum_all(out)?;
            Ok((loss, bound))
        };
        let report = finite_diff_check(&store, &mut build, 1e-5, 1e-5).unwrap();
        assert!(report.all_pass(), "{:?}", report.worst_first()[0]);
    }
}
