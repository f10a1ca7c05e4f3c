use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ssvae::{one_hot_labels, InferenceMode, Ssvae};
use crate::distributions::{gaussian_node, sample_standard_normal};
use crate::error::Result;
use crate::graph::{Graph, Tensor};
use crate::rng::StreamRng;

/// Seconds per forward/backward step of the classifier `D`, the encoder
/// `I`, and the decoder `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentCosts {
    pub d: f64,
    pub i: f64,
    pub g: f64,
}

/// Predicted cost of one unlabeled step: `D + k(I + G)` when marginalizing,
/// `D + I + G` with a single sample.
pub fn step_cost_model(k: usize, mode: InferenceMode, costs: &ComponentCosts) -> f64 {
    match mode {
        InferenceMode::Marginalize => costs.d + k as f64 * (costs.i + costs.g),
        InferenceMode::Gumbel | InferenceMode::StGumbel => costs.d + costs.i + costs.g,
    }
}

/// Predicted single-sample over marginalization steps-per-second ratio.
pub fn predicted_speedup(k: usize, costs: &ComponentCosts) -> f64 {
    step_cost_model(k, InferenceMode::Marginalize, costs) / step_cost_model(k, InferenceMode::Gumbel, costs)
}

fn time_per_rep(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let start = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / reps.max(1) as f64)
}

/// Time each component's forward and backward pass on a batch.
pub fn calibrate_component_costs(model: &Ssvae, x: &Tensor, reps: usize, rng: &mut StreamRng) -> Result<ComponentCosts> {
    let n = x.shape()[0];
    let dims = model.dims;
    let y = one_hot_labels(&vec![0; n], dims.classes)?;
    let eps = sample_standard_normal(&[n, dims.style], rng);
    let d = time_per_rep(reps, || {
        let mut g = Graph::new();
        let pv = model.params.leaves(&mut g);
        let xv = g.constant(x.clone());
        let l = model.classifier_logits(&mut g, &pv, xv)?;
        let s = g.sum_all(l)?;
        g.backward(s).map(|_| ())
    })?;
    let i = time_per_rep(reps, || {
        let mut g = Graph::new();
        let pv = model.params.leaves(&mut g);
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let xy = g.concat(&[xv, yv], 1)?;
        let h = model.enc.forward(&mut g, &pv, xy)?;
        let h = g.relu(h)?;
        let mu = model.enc_mu.forward(&mut g, &pv, h)?;
        let ls = model.enc_ls.forward(&mut g, &pv, h)?;
        let z = gaussian_node(&mut g, mu, ls, eps.clone())?;
        let s = g.sum_all(z)?;
        g.backward(s).map(|_| ())
    })?;
    let zin = Tensor::from_fn(&[n, dims.classes + dims.style], |j| (j % 7) as f64 / 7.0);
    let gen = time_per_rep(reps, || {
        let mut g = Graph::new();
        let pv = model.params.leaves(&mut g);
        let z = g.param(zin.clone());
        let h = model.dec[0].forward(&mut g, &pv, z)?;
        let h = g.relu(h)?;
        let o = model.dec[1].forward(&mut g, &pv, h)?;
        let s = g.sum_all(o)?;
        g.backward(s).map(|_| ())
    })?;
    Ok(ComponentCosts { d, i, g: gen })
}
