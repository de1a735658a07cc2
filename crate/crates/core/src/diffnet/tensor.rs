//! Channel-major 4D tensor: c feature channels over a 3D grid.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::Dims3;

/// Values are stored channel-planar; within a channel the layout matches
/// [`Dims3::idx`] (x fastest). A debug build asserts finiteness after every
/// construction, which catches NaNs at the op where they appear.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    c: usize,
    dims: Dims3,
    values: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(c: usize, dims: Dims3, values: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if c == 0 {
            return Err(Error::InvalidDims("zero channels".to_string()));
        }
        if values.len() != c * dims.count() {
            return Err(Error::SizeMismatch {
                expected: c * dims.count(),
                found: values.len(),
            });
        }
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite tensor value"
        );
        Ok(Self { c, dims, values })
    }

    pub fn zeros(c: usize, dims: Dims3) -> Self {
        Self {
            c,
            dims,
            values: vec![T::zero(); c * dims.count()],
        }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline(always)]
    pub fn idx(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(c < self.c);
        c * self.dims.count() + self.dims.idx(x, y, z)
    }

    #[inline(always)]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> T {
        self.values[self.idx(c, x, y, z)]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: T) {
        let i = self.idx(c, x, y, z);
        self.values[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.dims.count();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.dims.count();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            c: self.c,
            dims: self.dims,
            values: self
                .values
                .iter()
                .map(|&v| crate::scalar::from_f64(crate::scalar::to_f64(v)))
                .collect(),
        }
    }
}
