use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Flat input offsets of the winning element of each 2×2 patch, plus the input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

/// Non-overlapping 2×2 max-pooling.
///
/// Ties go to the first element of the patch in row-major order.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            "maxpool2_forward",
            format!("height and width must be even, got {}x{}", s.h, s.w),
        ));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut argmax = Vec::with_capacity(out.len());
    let data = input.data();
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            for y in 0..oh {
                for x in 0..ow {
                    let top = base + 2 * y * s.w + 2 * x;
                    let candidates = [top, top + 1, top + s.w, top + s.w + 1];
                    let mut best = candidates[0];
                    for &i in &candidates[1..] {
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.data_mut()[o] = data[best];
                    argmax.push(best as u32);
                    o += 1;
                }
            }
        }
    }
    Ok((out, PoolIndices { input_shape: s, argmax }))
}

/// Routes each upstream value to the stored argmax position of its patch.
pub fn maxpool2_backward<T: Scalar>(indices: &PoolIndices, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.len() != indices.argmax.len() {
        return Err(Error::shape(
            "maxpool2_backward",
            format!(
                "upstream has {} values, pooling produced {}",
                upstream.len(),
                indices.argmax.len()
            ),
        ));
    }
    let mut grad = Tensor::zeros(indices.input_shape);
    let g = grad.data_mut();
    // patches never overlap, so every position is written at most once
    for (&i, &u) in indices.argmax.iter().zip(upstream.data()) {
        g[i as usize] = u;
    }
    Ok(grad)
}

/// Nearest-neighbour 2× upsampling: each pixel becomes a 2×2 block.
pub fn upsample2_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                let row = &src[(y / 2) * s.w..(y / 2 + 1) * s.w];
                for (x, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = row[x / 2];
                }
            }
        }
    }
    out
}

/// Sums the upstream gradient over every 2×2 block.
pub fn upsample2_backward<T: Scalar>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let s = upstream.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            "upsample2_backward",
            format!("upstream height and width must be even, got {}x{}", s.h, s.w),
        ));
    }
    let (ih, iw) = (s.h / 2, s.w / 2);
    let mut grad = Tensor::zeros(Shape::new(s.n, s.c, ih, iw));
    for n in 0..s.n {
        for c in 0..s.c {
            let up = upstream.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for y in 0..ih {
                for x in 0..iw {
                    let t = 2 * y * s.w + 2 * x;
                    let sum = (up[t].to_f64() + up[t + 1].to_f64()) + (up[t + s.w].to_f64() + up[t + s.w + 1].to_f64());
                    dst[y * iw + x] = T::from_f64(sum);
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use crate::tensor::test_util::{random_tensor, rng, tensor, weighted_sum, weights};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    #[test]
    fn pools_two_by_two() {
        let t: Tensor = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = maxpool2_forward(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
    }

    #[test]
    fn constant_input_routes_to_first_element() {
        let t: Tensor = Tensor::full(Shape::new(1, 1, 4, 4), 7.0);
        let (out, idx) = maxpool2_forward(&t).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
        let g = maxpool2_backward(&idx, &Tensor::full(out.shape(), 1.0f32)).unwrap();
        let expected: Vec<f32> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(g.data(), expected.as_slice());
    }

    #[test]
    fn odd_size_rejected() {
        assert!(maxpool2_forward(&Tensor::<f32>::zeros(Shape::new(1, 1, 3, 4))).is_err());
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut r = rng(7);
        let t = random_tensor(&mut r, Shape::new(1, 1, 8, 8), 5.0).cast::<f32>();
        let (out, _) = maxpool2_forward(&t).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let mut m = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(t.at(0, 0, 2 * y + dy, 2 * x + dx));
                    }
                }
                assert_eq!(out.at(0, 0, y, x), m);
            }
        }
    }

    #[test]
    fn upsample_replicates() {
        let t: Tensor = Tensor::full(Shape::new(1, 1, 1, 1), 5.0);
        assert_eq!(upsample2_forward(&t).data(), &[5.0; 4]);
        let g = upsample2_backward(&Tensor::full(Shape::new(1, 1, 2, 2), 1.0f32)).unwrap();
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn pooling_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut r = rng(300 + seed);
            // distinct values spaced well beyond the probe step so no argmax flips
            let shape = Shape::new(2, 2, 4, 6);
            let mut order: Vec<usize> = (0..shape.len()).collect();
            order.shuffle(&mut r);
            let values: Vec<f64> = order.iter().map(|&i| i as f64 * 0.05 - 1.0).collect();
            let t = tensor(shape, &values).unwrap();
            let (out, idx) = maxpool2_forward(&t).unwrap();
            let proj = weights(&mut r, out.len());
            let g = maxpool2_backward(&idx, &tensor(out.shape(), &proj).unwrap()).unwrap();
            let err = gradient_check(
                |p| Ok(weighted_sum(&maxpool2_forward(&tensor(shape, p)?)?.0, &proj)),
                t.data(),
                g.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn upsample_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut r = rng(400 + seed);
            let t = random_tensor(&mut r, Shape::new(1, 3, 3, 2), 1.0);
            let proj = weights(&mut r, t.len() * 4);
            let g = upsample2_backward(&tensor(Shape::new(1, 3, 6, 4), &proj).unwrap()).unwrap();
            let err = gradient_check(
                |p| Ok(weighted_sum(&upsample2_forward(&tensor(t.shape(), p)?), &proj)),
                t.data(),
                g.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    proptest! {
        #[test]
        fn pooling_conserves_gradient_mass(seed in 0u64..1000, h in 1usize..5, w in 1usize..5) {
            let mut r = rng(seed);
            let t = random_tensor(&mut r, Shape::new(1, 2, 2 * h, 2 * w), 1.0);
            let (out, idx) = maxpool2_forward(&t).unwrap();
            let up = random_tensor(&mut r, out.shape(), 1.0);
            let g = maxpool2_backward(&idx, &up).unwrap();
            prop_assert!((g.sum() - up.sum()).abs() < 1e-9);
            prop_assert_eq!(out.shape(), Shape::new(1, 2, h, w));
            prop_assert_eq!(upsample2_forward(&out).shape(), t.shape());
        }
    }
}
