//! Named parameter storage and deterministic initialization.

use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{HlgtError, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.shape().len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Named copies, the form [`crate::tensor::grad_check`] consumes.
    pub fn named(&self) -> Vec<(String, Tensor<F>)> {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().cloned())
            .collect()
    }

    pub fn from_named(named: Vec<(String, Tensor<F>)>) -> Self {
        let (names, tensors) = named.into_iter().unzip();
        ParamStore { names, tensors }
    }

    /// Replaces every tensor, checking that shapes are unchanged.
    pub fn replace_all(&mut self, tensors: Vec<Tensor<F>>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(HlgtError::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for ((name, old), new) in self.names.iter().zip(&self.tensors).zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(HlgtError::Checkpoint(format!(
                    "parameter `{name}` has shape {} but checkpoint holds {}",
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    /// Inserts every parameter into `tape` as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape<F>) -> Result<Binding> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Binding { vars })
    }

    /// Inserts every parameter as a constant, for inference without
    /// gradient bookkeeping.
    pub fn bind_constant(&self, tape: &mut Tape<F>) -> Result<Binding> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Binding { vars })
    }

    /// Binds pre-existing tape variables, e.g. those created by a gradient
    /// checker, in store order.
    pub fn binding_from_vars(&self, vars: &[Var]) -> Result<Binding> {
        if vars.len() != self.tensors.len() {
            return Err(HlgtError::InvalidArgument(format!(
                "binding expects {} variables, got {}",
                self.tensors.len(),
                vars.len()
            )));
        }
        Ok(Binding {
            vars: vars.to_vec(),
        })
    }
}

/// Tape variables for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Seeded initializer. Matrices are uniform in `±1/√fan_in`, biases zero.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, rows: usize, cols: usize) -> Tensor<f32> {
        let bound = 1.0 / (rows as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let data = (0..rows * cols)
            .map(|_| dist.sample(&mut self.rng) as f32)
            .collect();
        Tensor::new(rows, cols, data).expect("positive extents")
    }

    pub fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor<f32> {
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols)
            .map(|_| dist.sample(&mut self.rng) as f32)
            .collect();
        Tensor::new(rows, cols, data).expect("positive extents")
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}
