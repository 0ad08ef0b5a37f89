//! Named trainable parameters, batch-norm running statistics, and seeded
//! initialization helpers.

use super::tensor::Tensor;
use super::{AdError, Tape, Var};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Batch-norm running statistics; a buffer, not a parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Number of train-mode updates folded in; eval mode requires > 0.
    pub updates: u64,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Ordered collection of named parameters and batch-norm buffers.
///
/// Iteration order is insertion order everywhere, so optimizer updates,
/// checkpoints and gradient reports are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    bn: Vec<(String, BnStats)>,
    param_index: HashMap<String, usize>,
    bn_index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: &str, value: Tensor, trainable: bool) {
        assert!(
            !self.param_index.contains_key(name),
            "duplicate parameter {name}"
        );
        self.param_index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            trainable,
        });
    }

    pub fn add_bn(&mut self, name: &str, channels: usize) {
        assert!(!self.bn_index.contains_key(name), "duplicate bn stats {name}");
        self.bn_index.insert(name.to_string(), self.bn.len());
        self.bn.push((name.to_string(), BnStats::new(channels)));
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.param_index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.param_index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn bn_stats(&self, name: &str) -> Option<&BnStats> {
        self.bn_index.get(name).map(|&i| &self.bn[i].1)
    }

    pub fn bn_stats_mut(&mut self, name: &str) -> Option<&mut BnStats> {
        self.bn_index.get(name).map(|&i| &mut self.bn[i].1)
    }

    /// Detach one batch-norm buffer (by clone) so a forward pass can borrow
    /// the tape and the store simultaneously; write it back afterwards.
    pub fn take_bn(&self, name: &str) -> Option<BnStats> {
        self.bn_stats(name).cloned()
    }

    pub fn put_bn(&mut self, name: &str, stats: BnStats) {
        if let Some(slot) = self.bn_stats_mut(name) {
            *slot = stats;
        }
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn bn_entries(&self) -> &[(String, BnStats)] {
        &self.bn
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> bool {
        if let Some(p) = self.param_mut(name) {
            p.trainable = trainable;
            true
        } else {
            false
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn frozen_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| p.name.clone())
            .collect()
    }

    /// Bind every parameter onto the tape: trainable parameters as leaves,
    /// frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut vars = Vec::with_capacity(self.params.len());
        let mut by_name = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            let var = if p.trainable {
                tape.leaf(p.value.clone())
            } else {
                tape.constant(p.value.clone())
            };
            by_name.insert(p.name.clone(), var);
            vars.push((p.name.clone(), var));
        }
        BoundParams { vars, by_name }
    }
}

/// Tape handles for one binding of a [`ParamStore`].
pub struct BoundParams {
    vars: Vec<(String, Var)>,
    by_name: HashMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, AdError> {
        self.by_name.get(name).copied().ok_or(AdError::Invalid {
            op: "bound_params",
            msg: format!("no parameter named {name}"),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Leaf gradients after a backward pass, keyed by parameter name,
    /// in store order.
    pub fn gradients<'t>(&self, tape: &'t Tape) -> Vec<(String, Option<&'t Tensor>)> {
        self.vars
            .iter()
            .map(|(n, v)| (n.clone(), tape.grad(*v)))
            .collect()
    }
}

/// Uniform init scaled by `1/sqrt(fan_in)`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data).expect("uniform init shape")
}

/// Random orthogonal square matrix via modified Gram-Schmidt on a seeded
/// Gaussian matrix.
pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| normal.sample(rng)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let rj = rows[j].clone();
            for (a, b) in rows[i].iter_mut().zip(rj) {
                *a -= dot * b;
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        debug_assert!(norm > 1e-12, "degenerate Gram-Schmidt direction");
        rows[i].iter_mut().for_each(|v| *v /= norm);
    }
    let data = rows.into_iter().flatten().collect();
    Tensor::from_vec(&[n, n], data).expect("orthogonal shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = orthogonal(16, &mut rng);
        for i in 0..16 {
            for j in 0..16 {
                let dot: f64 = (0..16)
                    .map(|k| q.data()[i * 16 + k] * q.data()[j * 16 + k])
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "({i},{j}) dot {dot}");
            }
        }
    }

    #[test]
    fn bind_marks_frozen_params_as_constants() {
        let mut store = ParamStore::new();
        store.add_param("a", Tensor::scalar(1.0), true);
        store.add_param("b", Tensor::scalar(2.0), false);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let a = bound.get("a").unwrap();
        let b = bound.get("b").unwrap();
        let prod = tape.mul(a, b).unwrap();
        tape.backward(prod).unwrap();
        assert!(tape.grad(a).is_some());
        assert!(tape.grad(b).is_none());
    }
}
