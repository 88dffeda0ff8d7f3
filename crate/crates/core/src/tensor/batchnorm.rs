use super::{require_same_shape, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept on the running statistics at each update.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
    /// Number of train-mode updates folded into the running statistics.
    pub tracked: u64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::vector(vec![T::ONE; channels]),
            beta: Tensor::vector(vec![T::ZERO; channels]),
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::from_f64(x.to_f64())).collect();
        BatchNormState {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
            epsilon: self.epsilon,
            momentum: self.momentum,
            tracked: self.tracked,
        }
    }
}

/// What the train-mode backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T: Scalar = f32> {
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T: Scalar = f32> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Normalizes each channel and applies `gamma · x̂ + beta`.
///
/// Train mode uses the batch mean and biased variance over `(n, h, w)` and
/// folds them into the running statistics:
/// `running = momentum · running + (1 - momentum) · batch`.
/// Infer mode uses the running statistics and returns no cache.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let s = input.shape();
    if s.c != state.channels() {
        return Err(Error::shape(
            "batchnorm_forward",
            format!("input has {} channels, state has {}", s.c, state.channels()),
        ));
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut out = Tensor::zeros(s);
    match mode {
        Mode::Infer => Ok((batchnorm_infer(input, state)?, None)),
        Mode::Train => {
            if count == 0.0 {
                return Err(Error::shape("batchnorm_forward", "empty batch"));
            }
            let mut normalized = Tensor::zeros(s);
            let mut inv_stds = Vec::with_capacity(s.c);
            let keep = state.momentum;
            for c in 0..s.c {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().map(|&v| v.to_f64()).sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    sq += input
                        .plane(n, c)
                        .iter()
                        .map(|&v| {
                            let d = v.to_f64() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count;
                let inv_std = 1.0 / (var + state.epsilon).sqrt();
                inv_stds.push(inv_std);
                let (g, b) = (state.gamma.data()[c].to_f64(), state.beta.data()[c].to_f64());
                for n in 0..s.n {
                    let src = input.plane(n, c);
                    for (i, &x) in src.iter().enumerate() {
                        let xhat = (x.to_f64() - mean) * inv_std;
                        normalized.plane_mut(n, c)[i] = T::from_f64(xhat);
                        out.plane_mut(n, c)[i] = T::from_f64(g * xhat + b);
                    }
                }
                state.running_mean[c] = T::from_f64(keep * state.running_mean[c].to_f64() + (1.0 - keep) * mean);
                state.running_var[c] = T::from_f64(keep * state.running_var[c].to_f64() + (1.0 - keep) * var);
            }
            state.tracked += 1;
            Ok((
                out,
                Some(BatchNormCache {
                    normalized,
                    inv_std: inv_stds,
                }),
            ))
        }
    }
}

/// Infer-mode normalization with the running statistics; leaves `state` untouched.
pub fn batchnorm_infer<T: Scalar>(input: &Tensor<T>, state: &BatchNormState<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.c != state.channels() {
        return Err(Error::shape(
            "batchnorm_infer",
            format!("input has {} channels, state has {}", s.c, state.channels()),
        ));
    }
    if state.tracked == 0 {
        return Err(Error::UntrackedBatchNorm);
    }
    let mut out = Tensor::zeros(s);
    for c in 0..s.c {
        let mean = state.running_mean[c].to_f64();
        let inv_std = 1.0 / (state.running_var[c].to_f64() + state.epsilon).sqrt();
        let (g, b) = (state.gamma.data()[c].to_f64(), state.beta.data()[c].to_f64());
        for n in 0..s.n {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = T::from_f64(g * ((x.to_f64() - mean) * inv_std) + b);
            }
        }
    }
    Ok(out)
}

/// Train-mode gradients:
/// `dx = γ/σ · (dy − mean(dy) − x̂ · mean(dy · x̂))`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
    upstream: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let s: Shape = cache.normalized.shape();
    require_same_shape("batchnorm_backward", s, upstream.shape())?;
    let count = (s.n * s.plane()) as f64;
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![T::ZERO; s.c];
    let mut dbeta = vec![T::ZERO; s.c];
    for c in 0..s.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for n in 0..s.n {
            for (&g, &xh) in upstream.plane(n, c).iter().zip(cache.normalized.plane(n, c)) {
                sum_dy += g.to_f64();
                sum_dy_xhat += g.to_f64() * xh.to_f64();
            }
        }
        dgamma[c] = T::from_f64(sum_dy_xhat);
        dbeta[c] = T::from_f64(sum_dy);
        let scale = state.gamma.data()[c].to_f64() * cache.inv_std[c];
        let (mean_dy, mean_dy_xhat) = (sum_dy / count, sum_dy_xhat / count);
        for n in 0..s.n {
            let up = upstream.plane(n, c);
            let xh = cache.normalized.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for ((d, &g), &x) in dst.iter_mut().zip(up).zip(xh) {
                *d = T::from_f64(scale * (g.to_f64() - mean_dy - x.to_f64() * mean_dy_xhat));
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::vector(dgamma),
        beta: Tensor::vector(dbeta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use crate::tensor::test_util::{random_tensor, rng, tensor, weighted_sum, weights};

    #[test]
    fn standardized_batch_passes_through() {
        // two samples per channel at ±1: zero mean, unit variance
        let t: Tensor = Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let mut st = BatchNormState::new(1);
        let (out, _) = batchnorm_forward(&t, &mut st, Mode::Train).unwrap();
        for (a, b) in out.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_channel_gives_beta() {
        let t: Tensor = Tensor::full(Shape::new(3, 2, 2, 2), 4.2);
        let mut st = BatchNormState::new(2);
        st.beta = Tensor::vector(vec![0.5, -0.25]);
        let (out, _) = batchnorm_forward(&t, &mut st, Mode::Train).unwrap();
        for n in 0..3 {
            assert!(out.plane(n, 0).iter().all(|&v| (v - 0.5).abs() < 1e-6));
            assert!(out.plane(n, 1).iter().all(|&v| (v + 0.25).abs() < 1e-6));
        }
    }

    #[test]
    fn infer_before_update_is_an_error() {
        let mut st = BatchNormState::<f32>::new(1);
        let r = batchnorm_forward(&Tensor::zeros(Shape::new(1, 1, 2, 2)), &mut st, Mode::Infer);
        assert!(matches!(r, Err(Error::UntrackedBatchNorm)));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let t: Tensor = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![2.0, 4.0]).unwrap();
        let mut st = BatchNormState::new(1);
        batchnorm_forward(&t, &mut st, Mode::Train).unwrap();
        // mean 3, biased var 1
        assert!((st.running_mean[0] - 0.03).abs() < 1e-7);
        assert!((st.running_var[0] - 1.0).abs() < 1e-7);
        assert_eq!(st.tracked, 1);
        let (out, cache) = batchnorm_forward(&t, &mut st, Mode::Infer).unwrap();
        assert!(cache.is_none());
        let expected = (2.0 - 0.03) / (1.0f64 + 1e-5).sqrt();
        assert!((out.data()[0] as f64 - expected).abs() < 1e-5);
    }

    #[test]
    fn channel_mismatch() {
        let mut st = BatchNormState::<f32>::new(3);
        assert!(batchnorm_forward(&Tensor::zeros(Shape::new(1, 2, 2, 2)), &mut st, Mode::Train).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut r = rng(600 + seed);
            let shape = Shape::new(2, 3, 3, 2 + seed as usize % 3);
            let input = random_tensor(&mut r, shape, 2.0);
            let mut state = BatchNormState::new(3);
            state.gamma = random_tensor(&mut r, Shape::new(1, 3, 1, 1), 1.5);
            state.beta = random_tensor(&mut r, Shape::new(1, 3, 1, 1), 1.0);
            let proj = weights(&mut r, input.len());
            let mut st = state.clone();
            let (_, cache) = batchnorm_forward(&input, &mut st, Mode::Train).unwrap();
            let up = tensor(shape, &proj).unwrap();
            let g = batchnorm_backward(&cache.unwrap(), &state, &up).unwrap();

            let eval = |x: &Tensor<f64>, st: &BatchNormState<f64>| -> Result<f64> {
                let mut st = st.clone();
                Ok(weighted_sum(&batchnorm_forward(x, &mut st, Mode::Train)?.0, &proj))
            };

            let err = gradient_check(|p| eval(&tensor(shape, p)?, &state), input.data(), g.input.data(), 1e-3).unwrap();
            assert!(err < 1e-3, "input seed {seed}: {err}");

            let err = gradient_check(
                |p| {
                    let mut st = state.clone();
                    st.gamma = Tensor::vector(p.to_vec());
                    eval(&input, &st)
                },
                state.gamma.data(),
                g.gamma.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "gamma seed {seed}: {err}");

            let err = gradient_check(
                |p| {
                    let mut st = state.clone();
                    st.beta = Tensor::vector(p.to_vec());
                    eval(&input, &st)
                },
                state.beta.data(),
                g.beta.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "beta seed {seed}: {err}");
        }
    }
}
