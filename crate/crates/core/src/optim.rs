//! Adam optimizer with bias correction.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Tape, TensorId};

/// Read every staged parameter's gradient off a backward-completed tape,
/// keyed by name, ready for [`adam_step`].
pub fn collect_grads(tape: &Tape, staged: &HashMap<String, TensorId>) -> Result<HashMap<String, Vec<f64>>> {
    let mut grads = HashMap::with_capacity(staged.len());
    for (name, &id) in staged {
        let g = tape
            .grad(id)
            .ok_or_else(|| Error::Numerics(format!("no gradient recorded for {name}")))?;
        grads.insert(name.clone(), g.to_vec());
    }
    Ok(grads)
}

/// Adam state: per-parameter moment buffers plus the step counter.
///
/// β1 = 0.9, β2 = 0.999, ε = 1e-8 throughout; only the learning rate varies
/// between model families.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// First-moment buffer for a parameter (zeros until its first update).
    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(|v| v.as_slice())
    }
}

/// Apply one bias-corrected Adam update in place:
///
///   m ← β1 m + (1−β1) g        m̂ = m / (1 − β1^t)
///   v ← β2 v + (1−β2) g²       v̂ = v / (1 − β2^t)
///   θ ← θ − lr · m̂ / (√v̂ + ε)
///
/// `grads` maps parameter names to flat gradient buffers; every parameter in
/// `params` must have a gradient of matching length.
pub fn adam_step(params: &mut ParamSet, grads: &HashMap<String, Vec<f64>>, state: &mut AdamState) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    for p in params.iter_mut() {
        let g = grads
            .get(&p.name)
            .ok_or_else(|| Error::Shape(format!("missing gradient for {}", p.name)))?;
        if g.len() != p.values.len() {
            return Err(Error::Shape(format!(
                "gradient for {} has {} values, parameter has {}",
                p.name,
                g.len(),
                p.values.len()
            )));
        }
        let m = state
            .m
            .entry(p.name.clone())
            .or_insert_with(|| vec![0.0; p.values.len()]);
        let v = state
            .v
            .entry(p.name.clone())
            .or_insert_with(|| vec![0.0; p.values.len()]);
        for i in 0..p.values.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.values[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
