//! Named parameter storage.
//!
//! A [`ParamSet`] owns every learnable weight of a model as plain flat
//! arrays, addressable by name and kept in a stable insertion order
//! (initialization, optimizer state, and checkpoints all rely on that
//! order). For a forward pass the set is bound onto a [`Tape`] as leaf
//! tensors; gradients are read back by name after `backward`.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    order: Vec<String>,
    map: HashMap<String, Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { order: Vec::new(), map: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "param {name}: {} elements for shape {:?}",
                data.len(),
                shape
            )));
        }
        if self.map.insert(name.to_string(), Param { shape, data }).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.order.push(name.to_string());
        Ok(())
    }

    /// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<T> =
            (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
        self.insert(name, shape, data)
    }

    pub fn insert_const(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<()> {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![T::from_f64(value); n])
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.map.get(name).ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.map.get_mut(name).ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.order.iter().map(move |n| (n.as_str(), &self.map[n]))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.map.values().map(|p| p.data.len()).sum()
    }

    /// Bind every parameter onto `tape` as a leaf tensor.
    pub fn bind(&self, tape: &Tape<T>, requires_grad: bool) -> Result<BoundParams<T>> {
        let mut tensors = HashMap::new();
        for (name, p) in self.iter() {
            tensors.insert(name.to_string(), tape.leaf(p.data.clone(), &p.shape, requires_grad)?);
        }
        Ok(BoundParams { tensors })
    }
}

/// Parameters materialized as tensors on one tape.
pub struct BoundParams<T: Scalar> {
    tensors: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> BoundParams<T> {
    /// Build a binding from already-materialized tensors (used by the
    /// gradient-check harness, which owns its leaf tensors).
    pub fn from_tensors(tensors: HashMap<String, Tensor<T>>) -> Self {
        BoundParams { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::invalid(format!("unbound parameter {name}")))
    }

    /// Gradient of one parameter after backward; zeros if it never
    /// entered the graph.
    pub fn grad_of(&self, name: &str) -> Result<Vec<T>> {
        let t = self.get(name)?;
        Ok(t.grad().unwrap_or_else(|| vec![T::zero(); t.numel()]))
    }
}
