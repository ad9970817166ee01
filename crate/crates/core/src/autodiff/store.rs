//! Named parameter blocks with gradient buffers.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// One flat block of parameters plus its gradient buffer.
#[derive(Clone, Debug)]
pub struct ParamBlock {
    values: Vec<f64>,
    grad: Vec<f64>,
    shape: Vec<usize>,
    trainable: bool,
}

impl ParamBlock {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    /// Simultaneous mutable values / immutable gradient access for
    /// optimizer updates.
    pub(crate) fn values_grad_mut(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.values, &self.grad)
    }

    /// (rows, cols) view of the block: matrices keep their shape,
    /// vectors and scalars become a single row.
    pub fn shape2d(&self) -> (usize, usize) {
        match self.shape.len() {
            2 => (self.shape[0], self.shape[1]),
            _ => (1, self.values.len()),
        }
    }
}

/// Parameter storage keyed by unique block names.
///
/// A `BTreeMap` keeps iteration order deterministic, which the optimizer,
/// checkpoints and gradient tests all rely on.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    blocks: BTreeMap<String, ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        values: Vec<f64>,
        trainable: bool,
    ) -> Result<()> {
        if self.blocks.contains_key(name) {
            return Err(Error::Parameter(format!("duplicate block name `{name}`")));
        }
        let expect: usize = shape.iter().product();
        if expect != values.len() || values.is_empty() {
            return Err(Error::Shape(format!(
                "block `{name}` shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "block `{name}` contains non-finite values"
            )));
        }
        let grad = vec![0.0; values.len()];
        self.blocks.insert(
            name.to_string(),
            ParamBlock {
                values,
                grad,
                shape,
                trainable,
            },
        );
        Ok(())
    }

    pub fn add_scalar(&mut self, name: &str, value: f64, trainable: bool) -> Result<()> {
        self.add_block(name, vec![1], vec![value], trainable)
    }

    pub fn block(&self, name: &str) -> Result<&ParamBlock> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown block `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        Ok(self.block(name)?.values())
    }

    pub fn values_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.blocks
            .get_mut(name)
            .map(|b| b.values.as_mut_slice())
            .ok_or_else(|| Error::Parameter(format!("unknown block `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.values(name)?;
        if v.len() != 1 {
            return Err(Error::Shape(format!("block `{name}` is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        Ok(self.block(name)?.grad())
    }

    pub(crate) fn grad_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.blocks
            .get_mut(name)
            .map(|b| b.grad.as_mut_slice())
            .ok_or_else(|| Error::Parameter(format!("unknown block `{name}`")))
    }

    pub fn zero_grads(&mut self) {
        for b in self.blocks.values_mut() {
            b.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Set the trainable flag on every block whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, b) in self.blocks.iter_mut() {
            if name.starts_with(prefix) {
                b.trainable = trainable;
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamBlock)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamBlock)> {
        self.blocks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.blocks.values().map(|b| b.values.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let mut s = ParamStore::new();
        s.add_block("w", vec![2, 2], vec![0.0; 4], true).unwrap();
        assert!(s.add_block("w", vec![4], vec![0.0; 4], true).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = ParamStore::new();
        let err = s.add_block("w", vec![2], vec![1.0, f64::NAN], true);
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut s = ParamStore::new();
        s.add_block("w", vec![3, 4], vec![1.0; 12], true).unwrap();
        assert_eq!(s.grad("w").unwrap().len(), 12);
        assert_eq!(s.block("w").unwrap().shape2d(), (3, 4));
    }

    #[test]
    fn prefix_freezing() {
        let mut s = ParamStore::new();
        s.add_scalar("main.w", 1.0, true).unwrap();
        s.add_scalar("ultra.w", 1.0, true).unwrap();
        s.set_trainable_prefix("main.", false);
        assert!(!s.block("main.w").unwrap().trainable());
        assert!(s.block("ultra.w").unwrap().trainable());
    }
}
