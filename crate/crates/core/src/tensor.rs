//! Dense tensors and the element type used throughout the crate.
//!
//! Everything numeric is generic over [`Real`] so the same code runs in
//! f64 (gradient checks, tests) and f32 (faster training), selected by
//! config.

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f32` and `f64`.
pub trait Real:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + std::iter::Sum + Send + Sync + 'static
{
    /// Identifier stored in checkpoint manifests.
    const DTYPE: &'static str;
    /// Bytes per element in the checkpoint blob.
    const BYTE_WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTE_WIDTH: usize = 4;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTE_WIDTH: usize = 8;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// A dense array with an optional gradient of the same shape.
///
/// Only rank-1 vectors and rank-2 matrices occur in this model; the shape
/// is kept general so reductions and concatenations stay uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Real> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || data.len() != expected {
            return Err(Error::shape(
                "tensor construction",
                format!("{expected} values for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![F::zero(); n], grad: None }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Tensor { shape: vec![data.len()], data, grad: None }
    }

    pub fn scalar(v: F) -> Self {
        Tensor { shape: vec![1], data: vec![v], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// The gradient, if one has been accumulated.
    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [F] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![F::zero(); n])
    }

    /// Drop the gradient back to "all zeros" (unallocated).
    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[F]) {
        debug_assert_eq!(delta.len(), self.data.len());
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g = *g + *d;
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0f64; 4]).is_ok());
        assert!(Tensor::new(vec![2, 2], vec![1.0f64; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn grad_starts_absent_and_accumulates() {
        let mut t = Tensor::vector(vec![1.0f64, 2.0]);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[0.5, 1.0]);
        assert_eq!(t.grad().unwrap(), &[1.0, 1.5]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }
}
