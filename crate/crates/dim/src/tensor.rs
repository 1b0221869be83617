//! Flat row-major f32 tensor with an optional gradient buffer.

use crate::error::{DimError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(DimError::Invalid(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        if n != data.len() {
            return Err(DimError::shape("Tensor::new", n, data.len()));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    /// 1-D tensor from a vector.
    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    /// Allocate (or zero) the gradient buffer.
    pub fn reset_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(DimError::shape("Tensor::reshape", self.data.len(), n));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// First dimension, by convention the batch size.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    /// Borrow batch item `i` as a flat slice.
    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.item_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Shape of a single batch item.
    pub fn item_shape(&self) -> Vec<usize> {
        self.shape[1..].to_vec()
    }
}

/// Sum with a 64-bit accumulator.
pub fn sum64(xs: &[f32]) -> f64 {
    xs.iter().map(|&v| f64::from(v)).sum()
}

/// L1 norm with a 64-bit accumulator.
pub fn l1_norm(xs: &[f32]) -> f64 {
    xs.iter().map(|&v| f64::from(v).abs()).sum()
}

/// L2 norm with a 64-bit accumulator.
pub fn l2_norm(xs: &[f32]) -> f64 {
    xs.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn reshape_preserves_length() {
        let t = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let t = t.reshape(vec![6]).unwrap();
        assert_eq!(t.shape(), &[6]);
        assert!(t.clone().reshape(vec![7]).is_err());
    }

    #[test]
    fn batch_item_views() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.item(0), &[1.0, 2.0]);
        assert_eq!(t.item(1), &[3.0, 4.0]);
    }

    #[test]
    fn norms_match_naive() {
        let xs = [0.5f32, -1.5, 2.0];
        assert!((l1_norm(&xs) - 4.0).abs() < 1e-12);
        assert!((l2_norm(&xs) - (0.25f64 + 2.25 + 4.0).sqrt()).abs() < 1e-12);
    }
}
