//! Dense row-major `f64` arrays.
//!
//! The batch dimension, when present, is always axis 0. Shapes are dynamic
//! (`Vec<usize>`); the layer code works on the raw slices directly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::Result;

/// Dense row-major tensor of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    /// Wraps an existing buffer; the element count must match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Same buffer under a new shape with an equal element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::contract(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({n})",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Elementwise `self += c * other`; shapes must match.
    pub fn axpy(&mut self, other: &Tensor, c: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn scaled(&self, c: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates two `(n, d_a)` / `(n, d_b)` matrices along axis 1.
    pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[0] != b.shape[0] {
            return Err(Error::contract(format!(
                "concat_cols wants matching 2-d row counts, got {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let (n, da, db) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut data = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            data.extend_from_slice(&a.data[i * da..(i + 1) * da]);
            data.extend_from_slice(&b.data[i * db..(i + 1) * db]);
        }
        Ok(Tensor { shape: vec![n, da + db], data })
    }

    /// Splits an `(n, d_a + d_b)` matrix back into `(n, d_a)` and `(n, d_b)`.
    pub fn split_cols(&self, da: usize) -> Result<(Tensor, Tensor)> {
        if self.shape.len() != 2 || self.shape[1] < da {
            return Err(Error::contract(format!(
                "split_cols({da}) does not fit shape {:?}",
                self.shape
            )));
        }
        let (n, d) = (self.shape[0], self.shape[1]);
        let db = d - da;
        let mut left = Vec::with_capacity(n * da);
        let mut right = Vec::with_capacity(n * db);
        for i in 0..n {
            left.extend_from_slice(&self.data[i * d..i * d + da]);
            right.extend_from_slice(&self.data[i * d + da..(i + 1) * d]);
        }
        Ok((
            Tensor { shape: vec![n, da], data: left },
            Tensor { shape: vec![n, db], data: right },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.clone().reshaped(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.clone().reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![9., 8.]).unwrap();
        let c = Tensor::concat_cols(&a, &b).unwrap();
        assert_eq!(c.data(), &[1., 2., 9., 3., 4., 8.]);
        let (l, r) = c.split_cols(2).unwrap();
        assert_eq!(l, a);
        assert_eq!(r, b);
    }

    #[test]
    fn from_vec_checks_count() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }
}
