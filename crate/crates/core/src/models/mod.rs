//! Stochastic binary network, discrete-latent VAE, and semi-supervised VAE,
//! all as dense networks over flattened images.

mod cost;
mod sbn;
mod ssvae;
mod vae;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{BaselineState, EstimatorSettings, LatentKind, SiteGradient};
use crate::graph::{Graph, Tensor, Var};
use crate::rng::StreamRng;

pub use cost::{calibrate_component_costs, predicted_speedup, step_cost_model, ComponentCosts};
pub use sbn::{Sbn, SbnArch};
pub use ssvae::{one_hot_labels, InferenceMode, ObjectiveTerms, Ssvae, SsvaeConfig, SsvaeDims, SsvaeNoise};
pub use vae::{Vae, VaeArch};

/// Probabilities are clamped to `[ε, 1 - ε]` before taking logs in
/// Bernoulli likelihoods.
pub const LIKELIHOOD_EPS: f64 = 1e-7;

/// A stochastic layer's latent family and size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LatentSpec {
    Bernoulli { units: usize },
    /// `groups` independent `k`-way variables, `groups · k` units.
    Categorical { k: usize, groups: usize },
}

impl LatentSpec {
    pub fn units(&self) -> usize {
        match *self {
            LatentSpec::Bernoulli { units } => units,
            LatentSpec::Categorical { k, groups } => k * groups,
        }
    }

    pub fn kind(&self) -> LatentKind {
        match *self {
            LatentSpec::Bernoulli { .. } => LatentKind::Bernoulli,
            LatentSpec::Categorical { k, .. } => LatentKind::Categorical { k },
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            LatentSpec::Bernoulli { .. } => Activation::Sigmoid,
            LatentSpec::Categorical { .. } => Activation::Softmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LatentSpec::Bernoulli { units } if units > 0 => Ok(()),
            LatentSpec::Categorical { k, groups } if k >= 2 && groups > 0 => Ok(()),
            _ => Err(Error::Config(format!("invalid latent layer {self:?}"))),
        }
    }

    /// Same family with the unit (or group) count scaled, at least one.
    pub fn scaled(&self, factor: f64) -> LatentSpec {
        let s = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        match *self {
            LatentSpec::Bernoulli { units } => LatentSpec::Bernoulli { units: s(units) },
            LatentSpec::Categorical { k, groups } => LatentSpec::Categorical { k, groups: s(groups) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    /// Per-group softmax.
    Softmax,
    Relu,
    Linear,
}

/// One stochastic layer: a dense map to logits followed by sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub latent: LatentSpec,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input: usize, latent: LatentSpec) -> Self {
        LayerSpec {
            input,
            output: latent.units(),
            latent,
            activation: latent.activation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        if self.input == 0 || self.output != self.latent.units() {
            return Err(Error::Config(format!(
                "layer {}->{} does not match {:?}",
                self.input, self.output, self.latent
            )));
        }
        if self.activation != self.latent.activation() {
            return Err(Error::Config(format!(
                "{:?} layers use {:?}, not {:?}",
                self.latent,
                self.latent.activation(),
                self.activation
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors, in creation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
    pub names: Vec<String>,
}

/// Affine map `x W + b` over parameters in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.tensors.push(t);
        self.names.push(name.into());
        self.tensors.len() - 1
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut StreamRng) -> Dense {
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-r..r));
        let w = self.push(format!("{name}.w"), w);
        let b = self.push(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Dense { w, b, fan_in, fan_out }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Register every tensor as a graph parameter.
    pub fn leaves(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }
}

impl Dense {
    pub fn forward(&self, g: &mut Graph, pv: &[Var], x: Var) -> Result<Var> {
        let h = g.matmul(x, pv[self.w])?;
        g.add_row(h, pv[self.b])
    }
}

/// Per-row `Σ_j x_j log p_j + (1 - x_j) log(1 - p_j)` with
/// `p = clamp(sigmoid(logits), ε, 1 - ε)`.
pub fn bernoulli_log_likelihood(g: &mut Graph, logits: Var, x: Var) -> Result<Var> {
    let p = g.sigmoid(logits)?;
    let p = g.clamp(p, LIKELIHOOD_EPS, 1.0 - LIKELIHOOD_EPS)?;
    let lp = g.log(p)?;
    let np = g.neg(p)?;
    let q = g.add_scalar(np, 1.0)?;
    let lq = g.log(q)?;
    let nx = g.neg(x)?;
    let x1 = g.add_scalar(nx, 1.0)?;
    let a = g.mul(x, lp)?;
    let b = g.mul(x1, lq)?;
    let s = g.add(a, b)?;
    g.sum(s, 1)
}

/// Plain-value twin of [`bernoulli_log_likelihood`] for one row.
pub fn bernoulli_log_likelihood_value(logits: &[f64], x: &[f64]) -> f64 {
    logits
        .iter()
        .zip(x)
        .map(|(&a, &xv)| {
            let p = crate::graph::sigmoid(a).clamp(LIKELIHOOD_EPS, 1.0 - LIKELIHOOD_EPS);
            xv * p.ln() + (1.0 - xv) * (1.0 - p).ln()
        })
        .sum()
}

/// Repeat each row of `[n, d]` `m` times consecutively: `[n·m, d]`.
pub fn repeat_rows(t: &Tensor, m: usize) -> Tensor {
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let mut data = Vec::with_capacity(n * m * d);
    for r in 0..n {
        for _ in 0..m {
            data.extend_from_slice(t.row(r));
        }
    }
    Tensor::new(vec![n * m, d], data).expect("consistent dims")
}

/// `log (1/m) Σ_i exp(v_i)` over consecutive groups of `m` values.
pub fn log_mean_exp_groups(values: &[f64], m: usize) -> Vec<f64> {
    values
        .chunks(m)
        .map(|c| {
            let mx = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return mx;
            }
            mx + (c.iter().map(|v| (v - mx).exp()).sum::<f64>() / c.len() as f64).ln()
        })
        .collect()
}

/// A model trained with a discrete-latent gradient estimator on binary
/// images; the harness drives SBN and VAE through this.
pub trait EstimatorModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Input the NVIL baseline network conditions on.
    fn conditioning(&self, images: &Tensor) -> Result<Tensor>;
    fn conditioning_dim(&self) -> usize;
    /// Per-row training cost and parameter gradients of its expectation.
    fn train_gradient(
        &self,
        images: &Tensor,
        settings: &EstimatorSettings,
        state: &BaselineState,
        rng: &mut StreamRng,
    ) -> Result<SiteGradient>;
    /// Per-example negative `m`-sample bound with discrete samples.
    fn eval_loss(&self, images: &Tensor, m: usize, rng: &mut StreamRng) -> Result<Vec<f64>>;
}

#[cfg(test)]
mod tests;
