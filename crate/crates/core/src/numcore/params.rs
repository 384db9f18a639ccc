use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor2>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor2) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config {
                path: name,
                message: "duplicate parameter name".into(),
            });
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    /// Adds a `rows × cols` tensor drawn from `U(-bound, bound)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        self.add(name, Tensor2::from_vec(rows, cols, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor2> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a tensor's values; the shape must not change.
    pub fn set(&mut self, id: ParamId, tensor: Tensor2) -> Result<()> {
        let cur = &self.tensors[id.0];
        if cur.shape() != tensor.shape() {
            return Err(Error::shape(
                format!("set {}", self.names[id.0]),
                format!("{:?}", cur.shape()),
                format!("{:?}", tensor.shape()),
            ));
        }
        self.tensors[id.0] = tensor;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor2] {
        &mut self.tensors
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    /// Scalar access across all tensors in order, for finite-difference checks.
    pub fn flat_get(&self, mut i: usize) -> f64 {
        for t in &self.tensors {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn flat_set(&mut self, mut i: usize, v: f64) {
        for t in &mut self.tensors {
            if i < t.len() {
                t.data_mut()[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    /// Name of the tensor holding flat scalar `i`.
    pub fn flat_name(&self, mut i: usize) -> &str {
        for (n, t) in self.iter() {
            if i < t.len() {
                return n;
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn zero_grads(&self) -> GradStore {
        GradStore {
            tensors: self.tensors.iter().map(|t| Tensor2::zeros(t.rows(), t.cols())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor2::is_finite)
    }
}

/// Gradients congruent with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore {
    tensors: Vec<Tensor2>,
}

impl GradStore {
    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_congruent(&self, params: &ParamStore) -> bool {
        self.tensors.len() == params.len()
            && self.tensors.iter().zip(params.tensors()).all(|(g, p)| g.shape() == p.shape())
    }

    pub fn flat_get(&self, mut i: usize) -> f64 {
        for t in &self.tensors {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn add_assign(&mut self, other: &GradStore) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(Tensor2::norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor2::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|&x| x == 0.0))
    }
}
