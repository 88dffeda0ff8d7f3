use crate::error::{Error, Result};

/// Magnitude below which gradient components are compared absolutely rather
/// than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-2;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares an analytic gradient against central differences of `loss`.
///
/// `loss` maps a full parameter vector to a scalar. Each coordinate is
/// perturbed by `±eps`; the differences are taken in `f64`. Returns the
/// largest [`relative_error`] over all coordinates.
pub fn gradient_check<F>(mut loss: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("gradient_check eps must be > 0, got {eps}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "gradient_check",
            format!("{} params but {} gradient entries", params.len(), analytic.len()),
        ));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let plus = loss(&probe)?;
        probe[i] = params[i] - eps;
        let minus = loss(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss while probing coordinate {i}"),
            });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
