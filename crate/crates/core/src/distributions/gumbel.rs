use rand::Rng;

use super::{CategoricalParams, OneHot, SimplexSample};
use crate::error::{Error, Result};
use crate::graph::{argmax, DistTag, Graph, Tensor, Var};

/// Uniform draws are clamped to `[UNIFORM_EPS, 1 - UNIFORM_EPS]` before the
/// double log, so Gumbel variates stay within about ±27.6. A clamp needs a
/// draw within 1e-12 of an endpoint.
pub const UNIFORM_EPS: f64 = 1e-12;

/// Inverse-transform map `u -> -ln(-ln u)` with the endpoint clamp.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

/// Inverse-transform map for the standard logistic, `ln u - ln(1 - u)`;
/// the law of the difference of two independent Gumbel(0, 1) variates.
pub fn logistic_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    u.ln() - (-u).ln_1p()
}

/// I.i.d. Gumbel(0, 1) variates of the given shape.
pub fn sample_gumbel<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| gumbel_from_uniform(rng.gen::<f64>()))
}

/// I.i.d. standard logistic variates of the given shape.
pub fn sample_logistic<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| logistic_from_uniform(rng.gen::<f64>()))
}

/// `one_hot(argmax_i [g_i + x_i])` for given noise `g`.
pub fn gumbel_max_with_noise(params: &CategoricalParams, noise: &[f64]) -> Result<OneHot> {
    let logits = params.logits().data();
    if noise.len() != logits.len() {
        return Err(Error::shape(
            "gumbel_max",
            format!("{} noise values for {} classes", noise.len(), logits.len()),
        ));
    }
    if logits.iter().all(|&x| x == f64::NEG_INFINITY) {
        return Err(Error::domain("gumbel_max", "every logit is -inf"));
    }
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(x, g)| x + g).collect();
    OneHot::new(logits.len(), argmax(&perturbed))
}

/// Exact categorical sample via the Gumbel-Max trick.
pub fn gumbel_max_sample<R: Rng + ?Sized>(params: &CategoricalParams, rng: &mut R) -> Result<OneHot> {
    let g = sample_gumbel(&[params.k()], rng);
    gumbel_max_with_noise(params, g.data())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// `y = softmax((x + g) / tau)` for given noise `g`.
pub fn gumbel_softmax_with_noise(
    params: &CategoricalParams,
    tau: f64,
    noise: &[f64],
) -> Result<SimplexSample> {
    check_tau(tau)?;
    let logits = params.logits().data();
    if noise.len() != logits.len() {
        return Err(Error::shape(
            "gumbel_softmax",
            format!("{} noise values for {} classes", noise.len(), logits.len()),
        ));
    }
    let scaled: Vec<f64> = logits.iter().zip(noise).map(|(x, g)| (x + g) / tau).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::domain("gumbel_softmax", "every logit is -inf"));
    }
    let e: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(SimplexSample {
        y: Tensor::vector(e.into_iter().map(|v| v / total).collect()),
        temperature: tau,
    })
}

/// One draw from the Gumbel-Softmax distribution.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    params: &CategoricalParams,
    tau: f64,
    rng: &mut R,
) -> Result<SimplexSample> {
    check_tau(tau)?;
    let g = sample_gumbel(&[params.k()], rng);
    gumbel_softmax_with_noise(params, tau, g.data())
}

/// Straight-through Gumbel-Softmax draw: the discretized forward value and
/// the relaxed sample it was taken from (the backward surrogate).
pub fn st_gumbel_softmax_sample<R: Rng + ?Sized>(
    params: &CategoricalParams,
    tau: f64,
    rng: &mut R,
) -> Result<(OneHot, SimplexSample)> {
    let y = gumbel_softmax_sample(params, tau, rng)?;
    Ok((y.discretize(), y))
}

/// Reparameterized Gumbel-Softmax node over the last axis of `logits`.
pub fn gumbel_softmax_node(g: &mut Graph, logits: Var, tau: f64, noise: Tensor) -> Result<Var> {
    check_tau(tau)?;
    let axis = last_axis(g, logits)?;
    let n = g.constant(noise.clone());
    let perturbed = g.add(logits, n)?;
    let y = g.tempered_softmax(perturbed, axis, tau)?;
    Ok(g.stochastic(y, DistTag::GumbelSoftmax, noise, true))
}

/// Gumbel-Softmax node with a learnable temperature given as `log_tau`
/// (a single-element node).
pub fn gumbel_softmax_node_learned_tau(
    g: &mut Graph,
    logits: Var,
    log_tau: Var,
    noise: Tensor,
) -> Result<Var> {
    let axis = last_axis(g, logits)?;
    let n = g.constant(noise.clone());
    let perturbed = g.add(logits, n)?;
    let neg = g.neg(log_tau)?;
    let inv_tau = g.exp(neg)?;
    let scaled = g.scale_by(perturbed, inv_tau)?;
    let y = g.softmax(scaled, axis)?;
    Ok(g.stochastic(y, DistTag::GumbelSoftmax, noise, true))
}

/// Straight-through Gumbel-Softmax node: one-hot forward value, adjoint
/// applied to the relaxed sample.
pub fn st_gumbel_softmax_node(g: &mut Graph, logits: Var, tau: f64, noise: Tensor) -> Result<Var> {
    check_tau(tau)?;
    let axis = last_axis(g, logits)?;
    let n = g.constant(noise.clone());
    let perturbed = g.add(logits, n)?;
    let y = g.tempered_softmax(perturbed, axis, tau)?;
    let hard = g.apply(crate::graph::OpTag::StraightThrough { axis }, &[y])?;
    Ok(g.stochastic(hard, DistTag::StGumbelSoftmax, noise, true))
}

/// Non-reparameterized categorical sample node (Gumbel-Max over the last
/// axis). Gradients stop here.
pub fn categorical_node(g: &mut Graph, logits: Var, noise: Tensor) -> Result<Var> {
    let axis = last_axis(g, logits)?;
    let n = g.constant(noise.clone());
    let perturbed = g.add(logits, n)?;
    let z = g.argmax_one_hot(perturbed, axis)?;
    Ok(g.stochastic(z, DistTag::Categorical, noise, false))
}

/// Hard Bernoulli draws `1[a + L > 0]` for logits `a` and logistic noise `L`.
pub fn bernoulli_from_logistic(logits: &Tensor, noise: &Tensor) -> Result<Tensor> {
    logits.zip_map(noise, |a, l| if a + l > 0.0 { 1.0 } else { 0.0 })
}

/// Non-reparameterized Bernoulli sample node.
pub fn bernoulli_node(g: &mut Graph, logits: Var, noise: Tensor) -> Result<Var> {
    let hard = bernoulli_from_logistic(g.value(logits), &noise)?;
    let c = g.constant(hard);
    Ok(g.stochastic(c, DistTag::Bernoulli, noise, false))
}

/// Binary relaxation `sigmoid((a + L) / tau)`: the two-class Gumbel-Softmax
/// with logits `(a, 0)`, reported as the first coordinate.
pub fn relaxed_bernoulli_node(g: &mut Graph, logits: Var, tau: f64, noise: Tensor) -> Result<Var> {
    check_tau(tau)?;
    let n = g.constant(noise.clone());
    let perturbed = g.add(logits, n)?;
    let scaled = g.scale(perturbed, 1.0 / tau)?;
    let y = g.sigmoid(scaled)?;
    Ok(g.stochastic(y, DistTag::GumbelSoftmax, noise, true))
}

/// Straight-through binary relaxation: forward `1[y > 1/2]`, backward
/// through `y`.
pub fn st_relaxed_bernoulli_node(
    g: &mut Graph,
    logits: Var,
    tau: f64,
    noise: Tensor,
) -> Result<Var> {
    check_tau(tau)?;
    let n = g.constant(noise.clone());
    let perturbed = g.add(logits, n)?;
    let scaled = g.scale(perturbed, 1.0 / tau)?;
    let y = g.sigmoid(scaled)?;
    // a + L > 0 exactly when y > 1/2; reuse the perturbed value to avoid
    // rounding at the boundary.
    let hard = g.value(perturbed).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let st = g.straight_through(hard, y)?;
    Ok(g.stochastic(st, DistTag::StGumbelSoftmax, noise, true))
}

fn last_axis(g: &Graph, v: Var) -> Result<usize> {
    match g.shape(v).len() {
        0 => Err(Error::shape("sample", "logits must have at least one axis")),
        r => Ok(r - 1),
    }
}
