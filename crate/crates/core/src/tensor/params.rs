use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, named parameter collection of one network.
///
/// Order is significant: it fixes the checkpoint layout and the pairing with
/// optimizer moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a trainable parameter. Names must be unique.
    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::config(alloc::format!("duplicate parameter `{name}`")));
        }
        let mut t = tensor;
        if !t.requires_grad() {
            t.set_requires_grad(true);
        }
        self.entries.push((name.to_string(), t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.leaf(t)).collect()
    }

    /// Records every parameter as a constant (frozen network).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| tape.constant(Tensor::new(t.shape(), t.data().to_vec()).expect("valid")))
            .collect()
    }

    /// Accumulates the tape gradients of `vars` (as returned by [`bind`]) into
    /// the parameters' grad fields.
    ///
    /// [`bind`]: ParamStore::bind
    pub fn collect_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        if vars.len() != self.entries.len() {
            return Err(Error::shape("collect_grads", &[self.entries.len()], &[vars.len()]));
        }
        for ((_, t), &v) in self.entries.iter_mut().zip(vars) {
            tape.write_grad(v, t)?;
        }
        Ok(())
    }

    /// Structural check used when loading parameters from outside.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }
}
