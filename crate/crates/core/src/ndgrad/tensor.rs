//! Dense row-major tensors with an optional gradient buffer.

use super::NdGradError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, NdGradError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NdGradError::BadTensorData {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::zero(); n],
            grad: None,
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn from_slice(shape: Vec<usize>, data: &[F]) -> Result<Self, NdGradError> {
        Self::new(shape, data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Reinterpret the same buffer under a new shape of equal volume.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NdGradError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NdGradError::BadTensorData {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // ── gradient buffer ─────────────────────────────────────────────

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [F] {
        if self.grad.is_none() {
            self.grad = Some(vec![F::zero(); self.data.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn accumulate_grad(&mut self, g: &[F]) {
        debug_assert_eq!(g.len(), self.data.len());
        let buf = self.grad_mut();
        for (b, &v) in buf.iter_mut().zip(g) {
            *b += v;
        }
    }

    pub fn scale_grad(&mut self, s: F) {
        if let Some(g) = self.grad.as_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(F::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_volume_is_enforced() {
        let err = Tensor::new(vec![2, 3], vec![0.0f64; 5]).unwrap_err();
        assert!(matches!(err, NdGradError::BadTensorData { .. }));
        assert!(Tensor::new(vec![2, 3], vec![0.0f64; 6]).is_ok());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[1.0, -0.5]);
        assert_eq!(t.grad().unwrap(), &[1.5, 0.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.clone().reshape(vec![3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4, 2]).is_err());
    }
}
