//! Dense row-major tensors backed by a flat buffer.
//!
//! Shapes are plain `Vec<usize>`; the crate convention for image-like
//! data is `[channels, height, width]`. There is no striding or view
//! machinery — every tensor owns a contiguous buffer, which keeps the
//! conv kernels and the serialization code straightforward.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!(
                "tensor shape {:?} wants {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::ZERO; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Interpret as `[C, H, W]`, the crate's image layout.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(Error::config(format!(
                "expected a [C, H, W] tensor, got shape {:?}",
                other
            ))),
        }
    }

    /// Interpret as `[N, C, Kh, Kw]` (conv weight layout).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, kh, kw] => Ok((n, c, kh, kw)),
            other => Err(Error::config(format!(
                "expected a [N, C, Kh, Kw] tensor, got shape {:?}",
                other
            ))),
        }
    }

    /// Lossless element-type change through `f64`. Used to promote an
    /// `f32` model to `f64` for gradient checking: every `f32` value is
    /// exactly representable in `f64`, so the promoted model computes
    /// the same function.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    /// Elementwise maximum absolute difference, in `f64`.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Sum of squared elements, accumulated in `f64`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 6]).is_ok());
    }

    #[test]
    fn dims3_requires_rank_three() {
        let t = Tensor::<f32>::zeros(vec![3, 4, 5]);
        assert_eq!(t.dims3().unwrap(), (3, 4, 5));
        let t = Tensor::<f32>::zeros(vec![12]);
        assert!(t.dims3().is_err());
    }

    #[test]
    fn cast_roundtrips_f32_exactly() {
        let t = Tensor::new(vec![3], vec![0.1f32, -2.5, 3.25]).unwrap();
        let up: Tensor<f64> = t.cast();
        let down: Tensor<f32> = up.cast();
        assert_eq!(t, down);
    }
}
