use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter collection. Iteration order is the lexicographic name
/// order, which every optimizer, checkpoint and gradient check relies on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::dim(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::dim(format!("missing parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let zeros = Tensor::from_parts_unchecked(v.shape().to_vec(), vec![0.0; v.numel()]);
                (k.clone(), zeros)
            })
            .collect();
        ModelParams { tensors }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::dim(format!(
                "parameter sets differ in size ({} vs {})",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (name, t) in &self.tensors {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    o.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        self.check_compatible(other)?;
        for (name, t) in self.tensors.iter_mut() {
            let o = &other.tensors[name];
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += *b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Keeps only the parameters whose name starts with one of `prefixes`.
    pub fn filter_prefix(&self, prefixes: &[&str]) -> Self {
        let tensors = self
            .tensors
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ModelParams { tensors }
    }

    /// Flat (name, index) address of the `k`-th scalar in iteration order.
    pub fn locate(&self, mut k: usize) -> Option<(&str, usize)> {
        for (name, t) in &self.tensors {
            if k < t.numel() {
                return Some((name.as_str(), k));
            }
            k -= t.numel();
        }
        None
    }
}

impl FromIterator<(String, Tensor)> for ModelParams {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ModelParams {
            tensors: iter.into_iter().collect(),
        }
    }
}
