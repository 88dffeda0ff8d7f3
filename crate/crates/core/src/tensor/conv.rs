use super::{dot_f64, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Convolution kernel bank: weights `(out, in, kh, kw)` and one bias per output channel.
///
/// Kernels are odd-sized and applied with same-size zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvFilter<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.h.is_multiple_of(2) || ws.w.is_multiple_of(2) {
            return Err(Error::shape(
                "conv_filter",
                format!("kernel must be odd-sized, got {}x{}", ws.h, ws.w),
            ));
        }
        if bias.len() != ws.n {
            return Err(Error::shape(
                "conv_filter",
                format!("{} output channels but {} biases", ws.n, bias.len()),
            ));
        }
        Ok(ConvFilter { weight, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        ConvFilter::new(
            Tensor::zeros(Shape::new(out_channels, in_channels, kernel, kernel)),
            Tensor::vector(vec![T::ZERO; out_channels]),
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvFilter<U> {
        ConvFilter {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

fn check_input<T: Scalar>(op: &'static str, input: Shape, filter: &ConvFilter<T>) -> Result<()> {
    if input.c != filter.in_channels() {
        return Err(Error::shape(
            op,
            format!(
                "input has {} channels but filter expects in_channels = {}",
                input.c,
                filter.in_channels()
            ),
        ));
    }
    Ok(())
}

/// Valid output range for kernel tap `k` with half-width `r`: the source
/// coordinate `o + k - r` must lie in `0..len`.
#[inline]
fn tap_range(len: usize, k: usize, r: usize) -> (usize, usize) {
    let lo = r.saturating_sub(k);
    let hi = (len + r).saturating_sub(k).min(len);
    (lo, hi.max(lo))
}

/// Zero-padded same-size 2-D convolution.
///
/// Every output pixel sums its taps in `(in_channel, ky, kx)` order into an
/// `f64` accumulator and adds the bias last, wherever it sits in the image;
/// padding taps are skipped.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, filter: &ConvFilter<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    check_input("conv2d_forward", s, filter)?;
    let (kh, kw) = filter.kernel();
    let (rh, rw) = (kh / 2, kw / 2);
    let oc = filter.out_channels();
    let (h, w) = (s.h, s.w);
    let wdata = filter.weight.data();
    let bias = filter.bias.data();

    let mut out = Tensor::zeros(Shape::new(s.n, oc, h, w));
    let mut acc = vec![0.0f64; h * w];
    for n in 0..s.n {
        for o in 0..oc {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for c in 0..s.c {
                let plane = input.plane(n, c);
                for ky in 0..kh {
                    let (y0, y1) = tap_range(h, ky, rh);
                    for kx in 0..kw {
                        let (x0, x1) = tap_range(w, kx, rw);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = wdata[((o * s.c + c) * kh + ky) * kw + kx].to_f64();
                        for y in y0..y1 {
                            let sy = y + ky - rh;
                            let src = &plane[sy * w + x0 + kx - rw..sy * w + x1 + kx - rw];
                            let dst = &mut acc[y * w + x0..y * w + x1];
                            for (a, &v) in dst.iter_mut().zip(src) {
                                *a += wv * v.to_f64();
                            }
                        }
                    }
                }
            }
            let b = bias[o].to_f64();
            for (dst, &a) in out.plane_mut(n, o).iter_mut().zip(&acc) {
                *dst = T::from_f64(a + b);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    filter: &ConvFilter<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    check_input("conv2d_backward", s, filter)?;
    let (kh, kw) = filter.kernel();
    let (rh, rw) = (kh / 2, kw / 2);
    let oc = filter.out_channels();
    let (h, w) = (s.h, s.w);
    let expected = Shape::new(s.n, oc, h, w);
    if upstream.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "upstream gradient is {} but forward output is {expected}",
                upstream.shape()
            ),
        ));
    }
    let wdata = filter.weight.data();

    // input gradient: scatter each upstream pixel back through the kernel taps
    let mut input_grad = Tensor::zeros(s);
    let mut acc = vec![0.0f64; h * w];
    for n in 0..s.n {
        for c in 0..s.c {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for o in 0..oc {
                let up = upstream.plane(n, o);
                for ky in 0..kh {
                    let (y0, y1) = tap_range(h, ky, rh);
                    for kx in 0..kw {
                        let (x0, x1) = tap_range(w, kx, rw);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = wdata[((o * s.c + c) * kh + ky) * kw + kx].to_f64();
                        for y in y0..y1 {
                            let sy = y + ky - rh;
                            let src = &up[y * w + x0..y * w + x1];
                            let dst = &mut acc[sy * w + x0 + kx - rw..sy * w + x1 + kx - rw];
                            for (a, &g) in dst.iter_mut().zip(src) {
                                *a += wv * g.to_f64();
                            }
                        }
                    }
                }
            }
            for (dst, &a) in input_grad.plane_mut(n, c).iter_mut().zip(&acc) {
                *dst = T::from_f64(a);
            }
        }
    }

    // weight and bias gradients: correlations of upstream with shifted input
    let mut weight_grad = Tensor::zeros(filter.weight.shape());
    let mut bias_grad = vec![T::ZERO; oc];
    for (o, bg) in bias_grad.iter_mut().enumerate() {
        let mut bsum = 0.0f64;
        for n in 0..s.n {
            bsum += upstream.plane(n, o).iter().map(|&g| g.to_f64()).sum::<f64>();
        }
        *bg = T::from_f64(bsum);
        for c in 0..s.c {
            for ky in 0..kh {
                let (y0, y1) = tap_range(h, ky, rh);
                for kx in 0..kw {
                    let (x0, x1) = tap_range(w, kx, rw);
                    let mut sum = 0.0f64;
                    if x0 < x1 {
                        for n in 0..s.n {
                            let up = upstream.plane(n, o);
                            let plane = input.plane(n, c);
                            for y in y0..y1 {
                                let sy = y + ky - rh;
                                sum += dot_f64(
                                    &up[y * w + x0..y * w + x1],
                                    &plane[sy * w + x0 + kx - rw..sy * w + x1 + kx - rw],
                                );
                            }
                        }
                    }
                    weight_grad.data_mut()[((o * s.c + c) * kh + ky) * kw + kx] = T::from_f64(sum);
                }
            }
        }
    }

    Ok(ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: Tensor::vector(bias_grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use crate::tensor::test_util::{random_tensor, rng, tensor, weighted_sum, weights};

    /// Six nested loops straight from the definition, in f64.
    fn naive_conv(input: &Tensor<f64>, filter: &ConvFilter<f64>) -> Vec<f64> {
        let s = input.shape();
        let ws = filter.weight.shape();
        let (rh, rw) = ((ws.h / 2) as isize, (ws.w / 2) as isize);
        let mut out = vec![0.0f64; s.n * ws.n * s.h * s.w];
        for n in 0..s.n {
            for o in 0..ws.n {
                for y in 0..s.h as isize {
                    for x in 0..s.w as isize {
                        let mut acc = filter.bias.data()[o];
                        for c in 0..s.c {
                            for dy in -rh..=rh {
                                for dx in -rw..=rw {
                                    let (sy, sx) = (y + dy, x + dx);
                                    if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                                        continue;
                                    }
                                    let wv = filter.weight.at(o, c, (dy + rh) as usize, (dx + rw) as usize);
                                    acc += wv * input.at(n, c, sy as usize, sx as usize);
                                }
                            }
                        }
                        out[((n * ws.n + o) * s.h + y as usize) * s.w + x as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let input: Tensor = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let filter = ConvFilter::new(Tensor::full(Shape::new(1, 1, 1, 1), 1.0), Tensor::vector(vec![0.0])).unwrap();
        let out = conv2d_forward(&input, &filter).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_kernel_center_sums_everything() {
        let input: Tensor = Tensor::from_vec(Shape::new(1, 1, 3, 3), (1..=9).map(|v| v as f32).collect()).unwrap();
        let filter = ConvFilter::new(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), Tensor::vector(vec![0.0])).unwrap();
        let out = conv2d_forward(&input, &filter).unwrap();
        assert_eq!(out.at(0, 0, 1, 1), 45.0);
        // corner sees only its 2x2 neighbourhood: 1+2+4+5
        assert_eq!(out.at(0, 0, 0, 0), 12.0);
    }

    #[test]
    fn matches_nested_loop_reference() {
        for seed in 0..5 {
            let mut r = rng(seed);
            let input = random_tensor(&mut r, Shape::new(2, 4, 8, 8), 1.0);
            let filter = ConvFilter::new(
                random_tensor(&mut r, Shape::new(5, 4, 3, 3), 1.0),
                random_tensor(&mut r, Shape::new(1, 5, 1, 1), 1.0),
            )
            .unwrap();
            let reference = naive_conv(&input, &filter);
            // the f32 engine path against the f64 reference
            let out = conv2d_forward(&input.cast::<f32>(), &filter.cast::<f32>()).unwrap();
            let exact = naive_conv(&input.cast::<f32>().cast(), &filter.cast::<f32>().cast());
            for ((a, b), e) in out.data().iter().zip(&reference).zip(&exact) {
                assert!((*a as f64 - e).abs() <= 1e-5, "{a} vs {e}");
                assert!((*a as f64 - b).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn channel_mismatch_names_dimensions() {
        let input: Tensor = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let filter = ConvFilter::zeros(2, 4, 3).unwrap();
        let err = conv2d_forward(&input, &filter).unwrap_err().to_string();
        assert!(err.contains("3 channels") && err.contains("in_channels = 4"), "{err}");
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvFilter::<f32>::zeros(1, 1, 2).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(1);
        let input = random_tensor(&mut r, Shape::new(1, 2, 5, 5), 1.0);
        let filter = ConvFilter::new(
            random_tensor(&mut r, Shape::new(3, 2, 3, 3), 1.0),
            Tensor::vector(vec![0.1, 0.2, 0.3]),
        )
        .unwrap();
        let g = conv2d_backward(&input, &filter, &Tensor::zeros(Shape::new(1, 3, 5, 5))).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let input: Tensor = Tensor::full(Shape::new(1, 1, 1, 1), 2.5);
        let filter = ConvFilter::new(Tensor::full(Shape::new(1, 1, 1, 1), -1.5), Tensor::vector(vec![0.0])).unwrap();
        let g = conv2d_backward(&input, &filter, &Tensor::full(Shape::new(1, 1, 1, 1), 1.0)).unwrap();
        assert_eq!(g.weight.data(), &[2.5]);
        assert_eq!(g.input.data(), &[-1.5]);
        assert_eq!(g.bias.data(), &[1.0]);
    }

    #[test]
    fn upstream_shape_checked() {
        let input: Tensor = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let filter = ConvFilter::zeros(2, 1, 3).unwrap();
        assert!(conv2d_backward(&input, &filter, &Tensor::zeros(Shape::new(1, 1, 4, 4))).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut r = rng(100 + seed);
            let k = if seed % 3 == 0 { 1 } else { 3 };
            let shape = Shape::new(1 + seed as usize % 2, 2, 3 + seed as usize % 4, 4);
            let input = random_tensor(&mut r, shape, 1.0);
            let filter = ConvFilter::new(
                random_tensor(&mut r, Shape::new(3, 2, k, k), 1.0),
                random_tensor(&mut r, Shape::new(1, 3, 1, 1), 1.0),
            )
            .unwrap();
            let out = conv2d_forward(&input, &filter).unwrap();
            let proj = weights(&mut r, out.len());
            let upstream = tensor(out.shape(), &proj).unwrap();
            let g = conv2d_backward(&input, &filter, &upstream).unwrap();

            let err = gradient_check(
                |p| Ok(weighted_sum(&conv2d_forward(&tensor(shape, p)?, &filter)?, &proj)),
                input.data(),
                g.input.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "input grad seed {seed}: {err}");

            let err = gradient_check(
                |p| {
                    let mut f = filter.clone();
                    f.weight.data_mut().copy_from_slice(p);
                    Ok(weighted_sum(&conv2d_forward(&input, &f)?, &proj))
                },
                filter.weight.data(),
                g.weight.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "weight grad seed {seed}: {err}");

            let err = gradient_check(
                |p| {
                    let mut f = filter.clone();
                    f.bias.data_mut().copy_from_slice(p);
                    Ok(weighted_sum(&conv2d_forward(&input, &f)?, &proj))
                },
                filter.bias.data(),
                g.bias.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "bias grad seed {seed}: {err}");
        }
    }
}
