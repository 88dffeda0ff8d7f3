use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::shape(
            "concat_channels",
            format!("batch/spatial extents differ: {sa} vs {sb}"),
        ));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    let (ca, cb) = (sa.c * sa.plane(), sb.c * sb.plane());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * ca..(n + 1) * ca]);
        data.extend_from_slice(&b.data()[n * cb..(n + 1) * cb]);
    }
    Tensor::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)
}

/// Inverse of [`concat_channels`]: the first `channels_a` channels and the rest.
/// Also serves as its backward pass.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, channels_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = t.shape();
    if channels_a > s.c {
        return Err(Error::shape(
            "split_channels",
            format!("cannot take {channels_a} channels from {s}"),
        ));
    }
    let p = s.plane();
    let (ca, cb) = (channels_a * p, (s.c - channels_a) * p);
    let mut a = Vec::with_capacity(s.n * ca);
    let mut b = Vec::with_capacity(s.n * cb);
    for n in 0..s.n {
        let sample = &t.data()[n * s.c * p..(n + 1) * s.c * p];
        a.extend_from_slice(&sample[..ca]);
        b.extend_from_slice(&sample[ca..]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, channels_a, s.h, s.w), a)?,
        Tensor::from_vec(Shape::new(s.n, s.c - channels_a, s.h, s.w), b)?,
    ))
}
