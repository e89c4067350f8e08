use crate::error::{NnError, Result};
use crate::scalar::Scalar;

/// Dense batch tensor. Axis 0 is the batch; the remaining axes follow the
/// table form of [`crate::Shape`], stored channels-last with x varying
/// fastest among spatial positions: `data[(b·S + s)·C + c]` where
/// `s = x + X·(y + Y·z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 5 {
            return Err(NnError::invalid(format!("tensor rank {} outside 1..=5", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::invalid(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    /// Stacks equally sized samples under a per-sample shape.
    pub fn from_samples<'a, I>(sample_shape: &[usize], samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        let per: usize = sample_shape.iter().product();
        let mut data = Vec::new();
        let mut b = 0;
        for s in samples {
            if s.len() != per {
                return Err(NnError::invalid(format!(
                    "sample {b} has {} values, expected {per}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
            b += 1;
        }
        let mut shape = vec![b];
        shape.extend_from_slice(sample_shape);
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
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

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// New tensor holding the samples at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> Tensor<T> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
