use super::{require_same_shape, Scalar, Tensor};
use crate::error::Result;

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.clear_grad();
    for v in out.data_mut() {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
    out
}

/// Passes `upstream` where `input > 0`, zero elsewhere (including at exactly 0).
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    require_same_shape("relu_backward", input.shape(), upstream.shape())?;
    let mut out = upstream.clone();
    out.clear_grad();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if !(x > T::ZERO) {
            *g = T::ZERO;
        }
    }
    Ok(out)
}
