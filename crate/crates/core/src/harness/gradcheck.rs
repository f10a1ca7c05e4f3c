use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{gumbel_softmax_node, sample_gumbel};
use crate::error::Result;
use crate::estimators::{BaselineState, EstimatorKind, EstimatorSettings};
use crate::graph::{Graph, Tensor};
use crate::models::{one_hot_labels, InferenceMode, LatentSpec, Sbn, SbnArch, Ssvae, SsvaeDims, SsvaeNoise, Vae, VaeArch};
use crate::oracle::check_param_gradients;
use crate::rng::{stream_rng, streams, StreamRng};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Central-difference step; near the cube root of machine epsilon.
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

impl GradCheck {
    fn new(name: &str, err: f64) -> Self {
        GradCheck {
            name: name.to_string(),
            max_relative_error: err,
            passed: err < GRADCHECK_TOLERANCE,
        }
    }
}

fn binary(n: usize, d: usize, rng: &mut StreamRng) -> Tensor {
    Tensor::from_fn(&[n, d], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
}

fn uniform(shape: &[usize], rng: &mut StreamRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Nudge every parameter so that zero-initialized biases do not put ReLU
/// pre-activations exactly on the kink, where central differences average
/// the two one-sided slopes.
fn jitter(params: &mut [Tensor], rng: &mut StreamRng) {
    for p in params {
        p.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
}

/// `Σ c ⊙ softmax(x / τ)` and the same through a Gumbel-Softmax sample
/// with frozen noise.
fn softmax_checks(rng: &mut StreamRng) -> Result<Vec<GradCheck>> {
    let x = uniform(&[3, 5], rng);
    let c = uniform(&[3, 5], rng);
    let noise = sample_gumbel(&[3, 5], rng);
    let tempered = |p: &[Tensor], grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let xv = g.param(p[0].clone());
        let s = g.scale(xv, 1.0 / 0.6)?;
        let y = g.softmax(s, 1)?;
        let cv = g.constant(c.clone());
        let w = g.mul(y, cv)?;
        let l = g.sum_all(w)?;
        let v = g.value(l).item()?;
        let grads = if grad { vec![g.backward(l)?.get_or_zeros(xv, p[0].shape())] } else { Vec::new() };
        Ok((v, grads))
    };
    let path = |p: &[Tensor], grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let xv = g.param(p[0].clone());
        let y = gumbel_softmax_node(&mut g, xv, 0.6, noise.clone())?;
        let cv = g.constant(c.clone());
        let w = g.mul(y, cv)?;
        let l = g.sum_all(w)?;
        let v = g.value(l).item()?;
        let grads = if grad { vec![g.backward(l)?.get_or_zeros(xv, p[0].shape())] } else { Vec::new() };
        Ok((v, grads))
    };
    let params = vec![x];
    let mut out = Vec::new();
    for (name, f) in [("tempered_softmax", &tempered as &dyn Fn(&[Tensor], bool) -> Result<(f64, Vec<Tensor>)>), ("gumbel_softmax_path", &path)] {
        let (_, grads) = f(&params, true)?;
        let e = check_param_gradients(&params, &grads, |p| Ok(f(p, false)?.0), GRADCHECK_STEP)?;
        out.push(GradCheck::new(name, e));
    }
    Ok(out)
}

fn sbn_check(seed: u64, rng: &mut StreamRng) -> Result<GradCheck> {
    let arch = SbnArch {
        input: 4,
        hidden: vec![LatentSpec::Categorical { k: 3, groups: 2 }, LatentSpec::Categorical { k: 2, groups: 2 }],
        output: 4,
    };
    let mut m = Sbn::new(arch, rng)?;
    jitter(&mut m.params.tensors, rng);
    let (up, low) = m.split(&binary(3, 8, rng))?;
    let s = EstimatorSettings::new(EstimatorKind::Gs).with_tau(0.8);
    let state = BaselineState::new(0.9);
    let noise = || stream_rng(seed, 1, streams::NOISE);
    let g = m.loss(&up, &low, &s, &state, &mut noise())?;
    let e = check_param_gradients(
        &m.params.tensors,
        &g.grads,
        |p| {
            let mut mm = m.clone();
            mm.params.tensors = p.to_vec();
            Ok(mm.loss(&up, &low, &s, &state, &mut noise())?.mean_cost())
        },
        GRADCHECK_STEP,
    )?;
    Ok(GradCheck::new("sbn_gs_loss", e))
}

fn vae_check(name: &str, latent: LatentSpec, seed: u64, rng: &mut StreamRng) -> Result<GradCheck> {
    let mut m = Vae::new(VaeArch { input: 6, latent }, rng)?;
    jitter(&mut m.params.tensors, rng);
    let x = binary(3, 6, rng);
    let s = EstimatorSettings::new(EstimatorKind::Gs).with_tau(0.7);
    let state = BaselineState::new(0.9);
    let noise = || stream_rng(seed, 2, streams::NOISE);
    let g = m.elbo(&x, &s, &state, &mut noise())?;
    let e = check_param_gradients(
        &m.params.tensors,
        &g.grads,
        |p| {
            let mut mm = m.clone();
            mm.params.tensors = p.to_vec();
            Ok(mm.elbo(&x, &s, &state, &mut noise())?.mean_cost())
        },
        GRADCHECK_STEP,
    )?;
    Ok(GradCheck::new(name, e))
}

fn ssvae_checks(rng: &mut StreamRng) -> Result<Vec<GradCheck>> {
    let dims = SsvaeDims {
        input: 6,
        classes: 3,
        style: 2,
        hidden: 5,
    };
    let mut m = Ssvae::new(dims, rng)?;
    jitter(&mut m.params.tensors, rng);
    let xl = binary(4, 6, rng);
    let yl = one_hot_labels(&[0, 1, 2, 1], 3)?;
    let xu = binary(5, 6, rng);
    let noise = SsvaeNoise::draw(&dims, 4, 5, rng);
    let mut out = Vec::new();
    for mode in [InferenceMode::Marginalize, InferenceMode::Gumbel] {
        let (_, grads) = m.objective_gradient(&xl, &yl, &xu, 0.3, mode, 0.7, &noise)?;
        let e = check_param_gradients(
            &m.params.tensors,
            &grads,
            |p| {
                let mut mm = m.clone();
                mm.params.tensors = p.to_vec();
                Ok(-mm.objective(&xl, &yl, &xu, 0.3, mode, 0.7, &noise)?.total)
            },
            GRADCHECK_STEP,
        )?;
        out.push(GradCheck::new(&format!("ssvae_{}_objective", mode.name()), e));
    }
    Ok(out)
}

/// Autodiff against central differences on the tempered softmax, a
/// frozen-noise Gumbel-Softmax path and every model loss at tiny widths.
pub fn run_gradient_checks(master_seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = stream_rng(master_seed, 0, streams::INIT);
    let mut out = softmax_checks(&mut rng)?;
    out.push(sbn_check(master_seed, &mut rng)?);
    out.push(vae_check("vae_categorical_gs_loss", LatentSpec::Categorical { k: 3, groups: 2 }, master_seed, &mut rng)?);
    out.push(vae_check("vae_bernoulli_gs_loss", LatentSpec::Bernoulli { units: 4 }, master_seed, &mut rng)?);
    out.extend(ssvae_checks(&mut rng)?);
    Ok(out)
}
