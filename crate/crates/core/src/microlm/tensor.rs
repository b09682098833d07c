use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { name: name.into(), shape: shape.to_vec(), data: vec![T::zero(); len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrices (embeddings, projections, head) are decayed; vectors
    /// (biases, norm gains and offsets) are not.
    pub fn decays(&self) -> bool {
        self.shape.len() >= 2
    }
}

/// Ordered collection of named tensors (parameters, gradients, moments).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMap<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> TensorMap<T> {
    pub fn zeros_like(other: &TensorMap<T>) -> Self {
        Self { tensors: other.tensors.iter().map(|t| Tensor::zeros(t.name.clone(), &t.shape)).collect() }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter()
    }

    pub fn n_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout<U: Real>(&self, other: &TensorMap<U>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Element at flat coordinate `i` across all tensors.
    pub fn flat_get(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.len() {
                return t.data[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn flat_get_mut(&mut self, mut i: usize) -> &mut T {
        for t in &mut self.tensors {
            if i < t.len() {
                return &mut t.data[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }
}
