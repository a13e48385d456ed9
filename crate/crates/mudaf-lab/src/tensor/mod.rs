//! Dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain shape + contiguous f64 buffer. All arithmetic runs
//! through a [`Tape`](tape::Tape), which records primitive applications and
//! replays them in reverse for gradients. [`gradcheck`] provides the
//! independent finite-difference oracle used to validate every backward rule.

pub mod gradcheck;
pub mod kernels;
pub mod tape;

pub use gradcheck::{check_gradients, numeric_gradients};
pub use tape::{Tape, Var};

use crate::error::{LabError, Result};

/// A dense row-major f64 tensor. Scalars use an empty shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, checking that `product(shape)` equals `data.len()`
    /// and that every extent is positive.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(LabError::Dimension(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(LabError::Dimension(format!(
                "shape {shape:?} implies {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![], data: vec![x], requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(LabError::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> Result<usize> {
        self.dim2().map(|(r, _)| r)
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> Result<usize> {
        self.dim2().map(|(_, c)| c)
    }

    pub fn dim2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(LabError::Dimension(format!(
                "expected a 2-D tensor, got shape {other:?}"
            ))),
        }
    }

    /// One contiguous row of a 2-D tensor.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let (r, c) = self.dim2()?;
        if i >= r {
            return Err(LabError::Usage(format!("row {i} out of range for {r} rows")));
        }
        Ok(&self.data[i * c..(i + 1) * c])
    }

    /// NaN/Inf is an error state; this is the validity check.
    pub fn validate_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(LabError::Numeric(format!(
                "non-finite value {} at flat index {pos} (shape {:?})",
                self.data[pos], self.shape
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_data_mismatch() {
        let err = Tensor::new(vec![2, 2], vec![1.0, 2.0]).unwrap_err();
        assert_eq!(err.class(), "dimension");
    }

    #[test]
    fn new_rejects_zero_extents() {
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape_and_one_element() {
        let s = Tensor::scalar(2.5);
        assert!(s.is_scalar());
        assert_eq!(s.numel(), 1);
        assert_eq!(s.item().unwrap(), 2.5);
    }

    #[test]
    fn validate_finite_flags_nan() {
        let t = Tensor::new(vec![3], vec![1.0, f64::NAN, 0.0]).unwrap();
        assert_eq!(t.validate_finite().unwrap_err().class(), "numeric");
        let ok = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        assert!(ok.validate_finite().is_ok());
    }
}
