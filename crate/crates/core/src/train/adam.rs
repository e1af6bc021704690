use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }
}

impl Adam {
    /// One bias-corrected Adam update of every parameter named in `grads`.
    ///
    /// Parameters absent from `grads` are left untouched. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&self, params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::dim(format!(
                    "gradient of {name:?} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {name:?}")));
            }
        }
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.numel()]);
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
