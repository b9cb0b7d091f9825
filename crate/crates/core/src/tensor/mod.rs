//! Dense tensors and the differentiable primitives built on them.
//!
//! Every activation is a rank-4 tensor in `(batch, height, width, channel)`
//! order, stored row-major with the channel index innermost. Convolution
//! weights use `(kernel_h, kernel_w, in_channels, out_channels)`, again
//! row-major, and biases are rank-1 `(out_channels)`.

mod gradcheck;
pub(crate) mod kernels;
mod param;
mod tape;

use std::fmt::Debug;
use std::sync::Arc;

pub use gradcheck::{grad_check, grad_check_with_step, GradCheckReport, FD_STEP};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

use crate::error::shape_err;
use crate::Result;

/// Floating point element type. Training runs in `f32`; gradient checks run
/// the same primitives in `f64`.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}
impl_scalar!(f32);
impl_scalar!(f64);

/// Immutable dense tensor with shared storage.
///
/// Cloning is cheap (the buffer is reference counted); [`Tensor::data_mut`]
/// copies on write if the buffer is shared.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; len]),
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: Arc::new((0..len).map(&mut f).collect()),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Returns `(n, h, w, c)` or a shape error if the tensor is not rank 4.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, h, w, c] => Ok([n, h, w, c]),
            other => Err(shape_err!("expected a rank-4 NHWC tensor, got {:?}", other)),
        }
    }

    /// Single element of a scalar (one-element) tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(shape_err!("expected a scalar, got shape {:?}", self.shape))
        }
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        let [_, h, w, ch] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        self.data[((n * h + y) * w + x) * ch + c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.to_f64())).collect()),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.len() {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sample `n` of a batch as a batch of one.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        let [batch, h, w, c] = self.dims4()?;
        if n >= batch {
            return Err(shape_err!("batch index {n} out of range for batch of {batch}"));
        }
        let stride = h * w * c;
        Tensor::new(vec![1, h, w, c], self.data[n * stride..(n + 1) * stride].to_vec())
    }

    /// Concatenates rank-4 tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack an empty list"))?;
        let [_, h, w, c] = first.dims4()?;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let [tn, th, tw, tc] = t.dims4()?;
            if (th, tw, tc) != (h, w, c) {
                return Err(shape_err!(
                    "cannot stack {:?} with {:?}",
                    first.shape(),
                    t.shape()
                ));
            }
            n += tn;
            data.extend_from_slice(t.data());
        }
        Tensor::new(vec![n, h, w, c], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![1, 2, 2, 1], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![1, 2, 2, 1], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::<f32>::from_fn(vec![1, 2, 2, 1], |i| i as f32);
        let b = Tensor::<f32>::from_fn(vec![1, 2, 2, 1], |i| 10.0 + i as f32);
        let ab = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.shape(), &[2, 2, 2, 1]);
        assert_eq!(ab.batch_item(0).unwrap(), a);
        assert_eq!(ab.batch_item(1).unwrap(), b);
        assert_eq!(ab.at(1, 1, 0, 0), 12.0);
    }

    #[test]
    fn copy_on_write() {
        let a = Tensor::<f32>::zeros(vec![3]);
        let mut b = a.clone();
        b.data_mut()[0] = 1.0;
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(b.data()[0], 1.0);
    }
}
