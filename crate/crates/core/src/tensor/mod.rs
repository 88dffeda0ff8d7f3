//! Minimal deterministic tensor engine.
//!
//! Every layer the U-Net needs is implemented as a pair of free functions,
//! a forward pass and an analytically derived backward pass. Kernels are
//! generic over the element type (models store `f32`, gradient checks use
//! `f64`); reductions accumulate in `f64` with a fixed summation order, so
//! identical inputs always give bit-identical outputs.

mod batchnorm;
mod concat;
mod conv;
mod gradcheck;
mod loss;
mod penalty;
mod pool;
mod relu;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, BatchNormCache, BatchNormGrads, BatchNormState, Mode,
    BN_EPSILON, BN_MOMENTUM,
};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d_backward, conv2d_forward, ConvFilter, ConvGrads};
pub use gradcheck::{gradient_check, relative_error};
pub use loss::{masked_cross_entropy, softmax_channels, PROB_FLOOR};
pub use penalty::l2_penalty;
pub use pool::{maxpool2_backward, maxpool2_forward, upsample2_backward, upsample2_forward, PoolIndices};
pub use relu::{relu_backward, relu_forward};

use crate::error::{Error, Result};

/// `(batch, channel, row, col)` extents of a dense tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Element type of a [`Tensor`]. Models run in `f32`; gradient checks run
/// the same kernels in `f64`.
pub trait Scalar: Copy + Default + PartialEq + PartialOrd + std::fmt::Debug + Send + Sync + 'static {
    const ZERO: Self;
    const ONE: Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dense row-major 4-D array with an optional gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.len()],
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape} needs {} values, got {}", shape.len(), data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// A `(1, len, 1, 1)` tensor, the layout used for per-channel vectors.
    pub fn vector(values: Vec<T>) -> Self {
        Tensor {
            shape: Shape::new(1, values.len(), 1, 1),
            data: values,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Element-wise conversion to another precision; the gradient is dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::ZERO; len])
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "set_grad",
                format!("gradient has {} values, tensor {}", grad.len(), self.shape),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    /// The `h × w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {} into {shape}", self.shape),
            ));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v.to_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn require_same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("expected {a}, got {b}")));
    }
    Ok(())
}

/// Dot product with four interleaved `f64` accumulators combined in a fixed order.
#[inline]
pub(crate) fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i].to_f64() * y[i].to_f64();
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += x.to_f64() * y.to_f64();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(Shape::new(1, 2, 2, 2), vec![0.0f32; 7]).is_err());
        let t = Tensor::from_vec(Shape::new(1, 2, 2, 2), vec![0.0f32; 8]).unwrap();
        assert_eq!(t.len(), 8);
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut t: Tensor = Tensor::zeros(Shape::new(2, 3, 4, 5));
        assert!(t.grad().is_none());
        assert_eq!(t.grad_mut().len(), t.len());
        assert!(t.set_grad(vec![0.0; 3]).is_err());
    }

    #[test]
    fn cast_round_trips_representable_values() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5f32, -2.0, 8.25]).unwrap();
        assert_eq!(t.cast::<f64>().cast::<f32>(), t);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f32> = (0..11).map(|i| i as f32 * 0.5).collect();
        let b: Vec<f32> = (0..11).map(|i| 1.0 - i as f32).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot_f64(&a, &b) - naive).abs() < 1e-12);
    }
}
