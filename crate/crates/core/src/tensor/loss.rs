use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-7;

/// Per-pixel softmax across the channel axis, max-subtracted for stability.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let mut exps = vec![0.0f64; s.c];
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let mut max = f64::NEG_INFINITY;
            for c in 0..s.c {
                max = max.max(input.data()[base + c * p + i].to_f64());
            }
            let mut sum = 0.0f64;
            for (c, e) in exps.iter_mut().enumerate() {
                *e = (input.data()[base + c * p + i].to_f64() - max).exp();
                sum += *e;
            }
            for (c, e) in exps.iter().enumerate() {
                out.data_mut()[base + c * p + i] = T::from_f64(e / sum);
            }
        }
    }
    out
}

/// Categorical cross-entropy over labeled pixels, fused with the softmax.
///
/// `labels` holds one code per pixel (`n·h·w`, row-major): 0 is unlabeled,
/// code `k ≥ 1` means channel `k - 1`. The loss is the (optionally
/// class-weighted) mean of `-ln p(true)` over labeled pixels, and the returned
/// gradient is with respect to the *logits* feeding the softmax:
/// `w · (p - onehot) / Σw` on labeled pixels, zero elsewhere.
pub fn masked_cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[u8],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Tensor<T>)> {
    let s: Shape = probs.shape();
    let p = s.plane();
    if labels.len() != s.n * p {
        return Err(Error::shape(
            "masked_cross_entropy",
            format!("{} labels for {} pixels", labels.len(), s.n * p),
        ));
    }
    if let Some(w) = class_weights {
        if w.len() != s.c {
            return Err(Error::shape(
                "masked_cross_entropy",
                format!("{} class weights for {} classes", w.len(), s.c),
            ));
        }
    }
    let weight = |k: usize| class_weights.map_or(1.0, |w| w[k]);

    let mut total_weight = 0.0f64;
    let mut loss = 0.0f64;
    for n in 0..s.n {
        for i in 0..p {
            let code = labels[n * p + i] as usize;
            if code == 0 {
                continue;
            }
            if code > s.c {
                return Err(Error::Invalid(format!(
                    "label code {code} out of range for {} classes",
                    s.c
                )));
            }
            let k = code - 1;
            let pk = probs.data()[(n * s.c + k) * p + i].to_f64();
            loss += weight(k) * -pk.max(PROB_FLOOR).ln();
            total_weight += weight(k);
        }
    }
    if total_weight == 0.0 {
        return Err(Error::EmptyBatch);
    }

    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        for i in 0..p {
            let code = labels[n * p + i] as usize;
            if code == 0 {
                continue;
            }
            let k = code - 1;
            let scale = weight(k) / total_weight;
            for c in 0..s.c {
                let idx = (n * s.c + c) * p + i;
                let target = if c == k { 1.0 } else { 0.0 };
                grad.data_mut()[idx] = T::from_f64((probs.data()[idx].to_f64() - target) * scale);
            }
        }
    }
    Ok((loss / total_weight, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use crate::tensor::test_util::{random_tensor, rng, tensor};
    use proptest::prelude::*;
    use rand::Rng;

    fn pixel(t: &Tensor) -> Vec<f32> {
        t.data().to_vec()
    }

    fn random_f32(seed: u64, shape: Shape, scale: f64) -> Tensor {
        random_tensor(&mut rng(seed), shape, scale).cast()
    }

    #[test]
    fn uniform_logits() {
        let t: Tensor = Tensor::zeros(Shape::new(1, 3, 1, 1));
        for v in pixel(&softmax_channels(&t)) {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let t: Tensor = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1000.0, 0.0, 0.0]).unwrap();
        let p = pixel(&softmax_channels(&t));
        assert!((p[0] - 1.0).abs() < 1e-7 && p[1] < 1e-30 && p[2] < 1e-30);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn one_two_three() {
        // exp(k) / (e + e^2 + e^3) evaluated directly
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expected: Vec<f64> = (1..=3).map(|k| (k as f64).exp() / denom).collect();
        assert!((expected[0] - 0.09003).abs() < 1e-5);
        assert!((expected[1] - 0.24473).abs() < 1e-5);
        assert!((expected[2] - 0.66524).abs() < 1e-5);
        let t: Tensor = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 2.0, 3.0]).unwrap();
        for (a, b) in pixel(&softmax_channels(&t)).iter().zip(&expected) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let probs: Tensor = Tensor::from_vec(Shape::new(1, 3, 1, 2), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (loss, _) = masked_cross_entropy(&probs, &[1, 3], None).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln3() {
        let probs: Tensor = Tensor::full(Shape::new(1, 3, 2, 2), 1.0 / 3.0);
        let (loss, _) = masked_cross_entropy(&probs, &[1, 2, 3, 0], None).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn no_labels_is_empty_batch() {
        let probs: Tensor = Tensor::full(Shape::new(1, 3, 1, 2), 1.0 / 3.0);
        assert!(matches!(
            masked_cross_entropy(&probs, &[0, 0], None),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn unlabeled_pixels_have_zero_gradient() {
        let probs = softmax_channels(&random_f32(9, Shape::new(1, 3, 2, 2), 2.0));
        let (_, g) = masked_cross_entropy(&probs, &[0, 2, 0, 1], None).unwrap();
        for c in 0..3 {
            assert_eq!(g.at(0, c, 0, 0), 0.0);
            assert_eq!(g.at(0, c, 1, 0), 0.0);
        }
    }

    #[test]
    fn fused_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut r = rng(700 + seed);
            let shape = Shape::new(2, 3, 3, 3);
            let logits = random_tensor(&mut r, shape, 2.0);
            let labels: Vec<u8> = (0..18).map(|_| r.random_range(0..4u8)).collect();
            let weights = if seed % 2 == 0 { None } else { Some([2.0, 0.5, 1.0]) };
            let probs = softmax_channels(&logits);
            let Ok((_, g)) = masked_cross_entropy(&probs, &labels, weights.as_ref().map(|w| &w[..])) else {
                continue;
            };
            let err = gradient_check(
                |p| {
                    let w = weights.as_ref().map(|w| &w[..]);
                    Ok(masked_cross_entropy(&softmax_channels(&tensor(shape, p)?), &labels, w)?.0)
                },
                logits.data(),
                g.data(),
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(seed in 0u64..500, scale in 0.1f64..50.0) {
            let t = random_f32(seed, Shape::new(2, 3, 3, 3), scale);
            let p = softmax_channels(&t);
            for n in 0..2 {
                for y in 0..3 {
                    for x in 0..3 {
                        let sum: f64 = (0..3).map(|c| p.at(n, c, y, x) as f64).sum();
                        prop_assert!((sum - 1.0).abs() < 1e-6);
                        for c in 0..3 {
                            prop_assert!((0.0..=1.0).contains(&p.at(n, c, y, x)));
                        }
                    }
                }
            }
        }
    }
}
