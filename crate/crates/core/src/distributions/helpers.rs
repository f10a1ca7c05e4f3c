use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CategoricalParams, OneHot};
use crate::error::{Error, Result};
use crate::graph::{DistTag, Graph, Tensor, Var};

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// 1.0 with probability `p`, else 0.0.
pub fn bernoulli_sample<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<f64> {
    check_prob(p)?;
    Ok(if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
}

pub fn bernoulli_log_prob(z: f64, p: f64) -> Result<f64> {
    check_prob(p)?;
    match z {
        1.0 => Ok(p.ln()),
        0.0 => Ok((1.0 - p).ln()),
        _ => Err(Error::InvalidArgument(format!("bernoulli outcome must be 0 or 1, got {z}"))),
    }
}

pub fn categorical_log_prob(z: &OneHot, params: &CategoricalParams) -> Result<f64> {
    if z.k() != params.k() {
        return Err(Error::shape("categorical_log_prob", format!("{} vs {}", z.k(), params.k())));
    }
    Ok(params.normalized_logits()[z.index()])
}

/// `μ + σ ε` with `ε ~ N(0, 1)`.
pub fn gaussian_reparam_sample<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    let eps: f64 = StandardNormal.sample(rng);
    Ok(mu + sigma * eps)
}

/// `KL(N(μ, diag σ²) || N(0, I))`.
pub fn gaussian_kl_to_standard(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::shape("gaussian_kl", format!("{} vs {}", mu.len(), sigma.len())));
    }
    if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {s}")));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
        .sum())
}

/// Standard normal noise of the given shape.
pub fn sample_standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Reparameterized Gaussian node `μ + exp(log σ) ⊙ ε`.
pub fn gaussian_node(g: &mut Graph, mu: Var, log_sigma: Var, eps: Tensor) -> Result<Var> {
    let sigma = g.exp(log_sigma)?;
    let e = g.constant(eps.clone());
    let scaled = g.mul(sigma, e)?;
    let z = g.add(mu, scaled)?;
    Ok(g.stochastic(z, DistTag::Gaussian, eps, true))
}

/// Per-row `KL(N(μ, diag σ²) || N(0, I))` for `[n, d]` inputs, as an `[n]` node.
pub fn gaussian_kl_node(g: &mut Graph, mu: Var, log_sigma: Var) -> Result<Var> {
    let mu2 = g.mul(mu, mu)?;
    let two_ls = g.scale(log_sigma, 2.0)?;
    let var = g.exp(two_ls)?;
    let a = g.add(mu2, var)?;
    let b = g.sub(a, two_ls)?;
    let c = g.add_scalar(b, -1.0)?;
    let per_row = g.sum(c, 1)?;
    g.scale(per_row, 0.5)
}

/// Per-row log-probability of one-hot `z` under `softmax(logits)` for
/// `[n, k]` inputs, as an `[n]` node.
pub fn categorical_log_prob_node(g: &mut Graph, logits: Var, z: Var) -> Result<Var> {
    let lp = g.log_softmax(logits, 1)?;
    let picked = g.mul(lp, z)?;
    g.sum(picked, 1)
}

/// Elementwise `z a - softplus(a)`: Bernoulli log-probability of `z` under
/// `sigmoid(a)`.
pub fn bernoulli_log_prob_node(g: &mut Graph, logits: Var, z: Var) -> Result<Var> {
    let za = g.mul(z, logits)?;
    let sp = g.softplus(logits)?;
    g.sub(za, sp)
}
