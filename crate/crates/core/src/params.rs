//! Named parameter storage shared by the models and the optimizer.
//!
//! Parameters live outside any tape. Each training step stages them onto a
//! fresh `Tape` as gradient-tracked leaves, runs forward/backward, then reads
//! the gradients back out by name. Registration order is the initialization
//! draw order and the checkpoint serialization order, so it must be stable
//! across runs; `ParamSet` keeps insertion order for exactly that reason.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::RunRng;
use crate::tensor::{Tape, TensorId};

/// A named weight tensor with its shape and flat row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered collection of parameters, keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter initialized from `rng.normal()` scaled by `std`
    /// (one draw per element, in element order).
    pub fn register_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut RunRng) -> Result<()> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.normal() * std).collect();
        self.register(name, shape, values)
    }

    /// Register a parameter with every element set to `fill`.
    pub fn register_const(&mut self, name: &str, shape: &[usize], fill: f64) -> Result<()> {
        let n: usize = shape.iter().product();
        self.register(name, shape, vec![fill; n])
    }

    pub fn register(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "parameter {name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(Error::Config(format!("unknown parameter {name}"))),
        }
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Copy out every parameter's values, in registration order. Paired with
    /// [`restore`](Self::restore) for best-epoch checkpointing in memory.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.values.clone()).collect()
    }

    /// Write back a snapshot taken from this same parameter set.
    pub fn restore(&mut self, snap: &[Vec<f64>]) {
        debug_assert_eq!(snap.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snap) {
            p.values.clone_from(s);
        }
    }

    /// Stage every parameter onto `tape` as a gradient-tracked leaf and
    /// return name -> tensor id for the graph builder and the optimizer.
    pub fn stage(&self, tape: &mut Tape) -> Result<HashMap<String, TensorId>> {
        let mut ids = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            let id = tape.param(p.values.clone(), p.shape.clone())?;
            ids.insert(p.name.clone(), id);
        }
        Ok(ids)
    }
}
