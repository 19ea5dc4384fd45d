use std::collections::HashMap;

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One named tensor of a model: a learnable parameter or a running
/// statistic buffer (tracked for checkpointing, excluded from learnable
/// parameter counts).
#[derive(Debug, Clone)]
pub struct ParamEntry<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub learnable: bool,
}

/// Insertion-ordered registry of named tensors. Every learnable tensor of
/// a model lives here under a unique hierarchical name, which is what
/// makes checkpointing, optimizer state and parameter counting line up.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<S>, learnable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            learnable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).map(|i| &self.entries[*i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.index.get(name).map(|i| &mut self.entries[*i].tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<S>> {
        self.index.get(name).map(|i| &self.entries[*i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<S>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<S>> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over learnable entries only; running statistics
    /// do not count as parameters.
    pub fn learnable_count(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.learnable)
            .map(|e| e.tensor.numel() as u64)
            .sum()
    }

    /// Name/shape pairs in insertion order, for registry comparisons.
    pub fn registry(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.insert(&e.name, e.tensor.cast::<T>(), e.learnable)
                .expect("names unique in source store");
        }
        out
    }

    /// Fold fresh batch statistics into a running buffer:
    /// `running = (1 - momentum)·running + momentum·batch`.
    pub fn update_running(&mut self, name: &str, batch: &[S], momentum: f64) -> Result<()> {
        let t = self
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no running buffer '{name}'")))?;
        if t.numel() != batch.len() {
            return Err(Error::Shape(format!(
                "running buffer '{name}' has {} values, update has {}",
                t.numel(),
                batch.len()
            )));
        }
        let m = S::from_f64(momentum);
        let keep = S::ONE - m;
        for (r, b) in t.data_mut().iter_mut().zip(batch) {
            *r = keep * *r + m * *b;
        }
        Ok(())
    }
}

/// Standard normal deviate via Box-Muller; deterministic given the rng.
pub(crate) fn normal(rng: &mut ChaCha12Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
