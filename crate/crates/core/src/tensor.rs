//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Element;

/// A shape-checked, row-major, contiguous buffer of scalars.
///
/// Weight matrices are stored `[out_features, in_features]`; logits are
/// `[seq_len, vocab_size]`; norm weights and activation-norm vectors are 1-D.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::ShapeMismatch {
                name: "<unnamed>".into(),
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch {
                name: "<unnamed>".into(),
                expected: vec![0, 0],
                got: other.to_vec(),
            }),
        }
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Copy of the first `rows` rows of a 2-D tensor.
    pub fn take_rows(&self, rows: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        assert!(rows <= r);
        Tensor::new(vec![rows, c], self.data[..rows * c].to_vec())
    }

    /// Element-wise cast between scalar types (exact for f32 -> f64).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

pub type Tensor32 = Tensor<f32>;
