use super::{CategoricalParams, SimplexSample};
use crate::error::{Error, Result};

/// `ln Γ(k)` for a positive integer `k`.
fn ln_gamma_int(k: usize) -> f64 {
    (2..k).map(|i| (i as f64).ln()).sum()
}

/// Log-density of the Gumbel-Softmax distribution at `y`, with respect to
/// Lebesgue measure on the first `k - 1` coordinates:
///
/// `ln Γ(k) + (k-1) ln τ - k · lse_i(x_i - τ ln y_i) + Σ_i (x_i - (τ+1) ln y_i)`
///
/// where `x` are the logits normalized so that `Σ exp(x_i) = 1`.
pub fn gumbel_softmax_log_density(
    y: &SimplexSample,
    params: &CategoricalParams,
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    let k = params.k();
    if y.k() != k {
        return Err(Error::shape("gumbel_softmax_log_density", format!("{} vs {k}", y.k())));
    }
    let yd = y.y.data();
    if let Some(bad) = yd.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(
            "gumbel_softmax_log_density",
            format!("coordinate {bad} is not positive"),
        ));
    }
    let total: f64 = yd.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(
            "gumbel_softmax_log_density",
            format!("coordinates sum to {total}"),
        ));
    }
    let x = params.normalized_logits();
    let log_y: Vec<f64> = yd.iter().map(|v| v.ln()).collect();

    let terms: Vec<f64> = x.iter().zip(&log_y).map(|(xi, ly)| xi - tau * ly).collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    let product: f64 = x
        .iter()
        .zip(&log_y)
        .map(|(xi, ly)| xi - (tau + 1.0) * ly)
        .sum();

    Ok(ln_gamma_int(k) + (k as f64 - 1.0) * tau.ln() - k as f64 * lse + product)
}
