use super::{ConvFilter, Scalar, Tensor};
use crate::error::{Error, Result};

/// Weight decay term `coeff · Σ w²` over convolution weights (biases excluded)
/// and its gradient `2 · coeff · w`, one tensor per filter.
pub fn l2_penalty<T: Scalar>(filters: &[&ConvFilter<T>], coeff: f64) -> Result<(f64, Vec<Tensor<T>>)> {
    if !(coeff >= 0.0) {
        return Err(Error::Invalid(format!("weight decay must be >= 0, got {coeff}")));
    }
    let mut total = 0.0f64;
    let mut grads = Vec::with_capacity(filters.len());
    for f in filters {
        let w = f.weight.data();
        total += w.iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>();
        let mut g = Tensor::zeros(f.weight.shape());
        for (d, &v) in g.data_mut().iter_mut().zip(w) {
            *d = T::from_f64(2.0 * coeff * v.to_f64());
        }
        grads.push(g);
    }
    Ok((coeff * total, grads))
}
