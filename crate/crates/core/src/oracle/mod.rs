//! Ground truth for the estimator and density suites: exact expected
//! gradients by enumeration, central finite differences, simplex
//! quadrature, and bias/variance audits.

mod audit;
mod quadrature;
mod testbed;

pub use audit::{audit_estimator, bonferroni_critical, AuditOptions, EstimatorAudit};
pub use quadrature::{simplex_quadrature, QUADRATURE_MARGIN};
pub use testbed::{EnumerationTestbed, TestbedCost, MAX_OUTCOMES};

use crate::error::{Error, Result};
use crate::graph::Tensor;

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h` per coordinate.
pub fn finite_difference<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    let mut x = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x)?;
        x[i] = orig - h;
        let dn = f(&x)?;
        x[i] = orig;
        if !up.is_finite() || !dn.is_finite() {
            return Err(Error::NonFinite(format!("finite difference at coordinate {i}")));
        }
        out.push((up - dn) / (2.0 * h));
    }
    Ok(out)
}

/// Pairwise (cascade) summation: the reduction order depends only on the
/// length, so results are reproducible bit-for-bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `max |a - n| / max(|a|, |n|)` with absolute error where both are below
/// `1e-8`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-8 {
                (a - n).abs()
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Largest relative error between `analytic` gradients and central
/// differences of `f` over every entry of every parameter tensor.
pub fn check_param_gradients<F>(params: &[Tensor], analytic: &[Tensor], mut f: F, h: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (i, (p, a)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != a.shape() {
            return Err(Error::shape("check_param_gradients", format!("parameter {i}")));
        }
        let numeric = finite_difference(
            |x| {
                work[i] = Tensor::new(p.shape().to_vec(), x.to_vec())?;
                f(&work)
            },
            p.data(),
            h,
        )?;
        work[i] = p.clone();
        worst = worst.max(max_relative_error(a.data(), &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
