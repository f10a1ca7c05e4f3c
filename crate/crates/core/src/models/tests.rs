use super::*;
use crate::estimators::{EstimatorKind, Sites};
use crate::oracle::{check_param_gradients, pairwise_sum};
use crate::rng::{stream_rng, streams};

fn binary(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 0, streams::DATA);
    Tensor::from_fn(&[n, d], |_| if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 })
}

fn tiny_sbn(seed: u64) -> Sbn {
    let arch = SbnArch {
        input: 4,
        hidden: vec![LatentSpec::Bernoulli { units: 3 }, LatentSpec::Categorical { k: 3, groups: 2 }],
        output: 4,
    };
    Sbn::new(arch, &mut stream_rng(seed, 0, streams::INIT)).unwrap()
}

fn tiny_vae(latent: LatentSpec) -> Vae {
    Vae::new(VaeArch { input: 6, latent }, &mut stream_rng(3, 0, streams::INIT)).unwrap()
}

fn tiny_ssvae(k: usize) -> Ssvae {
    let dims = SsvaeDims {
        input: 6,
        classes: k,
        style: 2,
        hidden: 5,
    };
    Ssvae::new(dims, &mut stream_rng(5, 0, streams::INIT)).unwrap()
}

#[test]
fn layer_specs_validate() {
    let l = LayerSpec::new(4, LatentSpec::Categorical { k: 10, groups: 2 });
    assert_eq!(l.output, 20);
    assert_eq!(l.activation, Activation::Softmax);
    l.validate().unwrap();
    let mut bad = l;
    bad.activation = Activation::Sigmoid;
    assert!(bad.validate().is_err());
    assert!(LatentSpec::Categorical { k: 1, groups: 3 }.validate().is_err());
    assert_eq!(
        LatentSpec::Categorical { k: 10, groups: 20 }.scaled(0.1),
        LatentSpec::Categorical { k: 10, groups: 2 }
    );
    assert_eq!(LatentSpec::Bernoulli { units: 200 }.scaled(0.001).units(), 1);
}

#[test]
fn glorot_initialization_range() {
    let mut p = ParamStore::new();
    let d = p.dense("l", 30, 10, &mut stream_rng(1, 0, 0));
    let r = (6.0f64 / 40.0).sqrt();
    assert!(p.tensors[d.w].data().iter().all(|v| v.abs() < r));
    assert!(p.tensors[d.w].data().iter().any(|v| v.abs() > 0.8 * r));
    assert!(p.tensors[d.b].data().iter().all(|v| *v == 0.0));
    assert_eq!(p.names, vec!["l.w", "l.b"]);
}

#[test]
fn likelihood_node_matches_plain_formula_and_clamps() {
    let logits = Tensor::matrix(2, 3, vec![0.3, -2.0, 40.0, 1.0, 0.0, -40.0]).unwrap();
    let x = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let xv = g.constant(x.clone());
    let ll = bernoulli_log_likelihood(&mut g, l, xv).unwrap();
    for r in 0..2 {
        let plain = bernoulli_log_likelihood_value(logits.row(r), x.row(r));
        assert!((g.value(ll).data()[r] - plain).abs() < 1e-12);
        assert!(plain > 3.0 * (1e-7f64).ln() - 5.0);
    }
}

#[test]
fn log_mean_exp_of_one_term_is_identity() {
    assert_eq!(log_mean_exp_groups(&[-3.5, 2.0], 1), vec![-3.5, 2.0]);
    let v = log_mean_exp_groups(&[0.0, 2f64.ln()], 2)[0];
    assert!((v - 1.5f64.ln()).abs() < 1e-15);
}

#[test]
fn sbn_single_sample_eval_equals_log_likelihood() {
    let m = tiny_sbn(1);
    let x = binary(5, 8, 2);
    let (up, low) = m.split(&x).unwrap();
    let bound = m.eval_bound(&up, &low, 1, &mut stream_rng(4, 0, streams::EVAL)).unwrap();
    let mut rng = stream_rng(4, 0, streams::EVAL);
    let mut g = Graph::new();
    let pv: Vec<Var> = m.params.tensors.iter().map(|t| g.constant(t.clone())).collect();
    let mut sites = Sites::discrete(&mut rng);
    let c = m.forward(&mut g, &pv, &up, &low, &mut sites).unwrap();
    for (b, c) in bound.iter().zip(g.value(c).data()) {
        assert!((b + c).abs() < 1e-12);
    }
    assert!(m.eval_bound(&up, &low, 0, &mut rng).is_err());
}

#[test]
fn sbn_perfect_decoder_has_near_zero_loss() {
    let mut m = tiny_sbn(1);
    let x = Tensor::from_fn(&[3, 8], |i| if i % 8 >= 4 && i % 2 == 0 { 1.0 } else { 0.0 });
    let n = m.params.len();
    // readout ignores h and saturates towards the target pattern
    m.params.tensors[n - 2] = Tensor::zeros(m.params.tensors[n - 2].shape());
    m.params.tensors[n - 1] = Tensor::vector(vec![60.0, -60.0, 60.0, -60.0]);
    let loss = m.eval_loss(&x, 4, &mut stream_rng(1, 0, 0)).unwrap();
    // the likelihood clamp leaves -4 log(1 - 1e-7)
    assert!(loss.iter().all(|l| l.abs() < 1e-6), "{loss:?}");
}

#[test]
fn multi_sample_bound_grows_with_m() {
    let m = tiny_sbn(7);
    let x = binary(40, 8, 3);
    let (up, low) = m.split(&x).unwrap();
    let reps = 20;
    let up = repeat_rows(&up, reps);
    let low = repeat_rows(&low, reps);
    let mean_at = |k: usize| {
        let b = m.eval_bound(&up, &low, k, &mut stream_rng(9, k as u64, streams::EVAL)).unwrap();
        pairwise_sum(&b) / b.len() as f64
    };
    let (b1, b10, b100) = (mean_at(1), mean_at(10), mean_at(100));
    assert!(b1 < b10 && b10 < b100, "{b1} {b10} {b100}");
}

fn sbn_fd(kind: EstimatorKind) -> f64 {
    let m = tiny_sbn(11);
    let x = binary(3, 8, 4);
    let (up, low) = m.split(&x).unwrap();
    let s = EstimatorSettings::new(kind).with_tau(0.8);
    let state = BaselineState::new(0.9);
    let g = m.loss(&up, &low, &s, &state, &mut stream_rng(2, 0, streams::NOISE)).unwrap();
    check_param_gradients(
        &m.params.tensors,
        &g.grads,
        |p| {
            let mut mm = m.clone();
            mm.params.tensors = p.to_vec();
            Ok(mm.loss(&up, &low, &s, &state, &mut stream_rng(2, 0, streams::NOISE))?.mean_cost())
        },
        1e-6,
    )
    .unwrap()
}

#[test]
fn sbn_relaxed_gradient_matches_finite_differences() {
    let e = sbn_fd(EstimatorKind::Gs);
    assert!(e < 1e-4, "{e}");
}

fn vae_fd(latent: LatentSpec) -> f64 {
    let m = tiny_vae(latent);
    let x = binary(3, 6, 5);
    let s = EstimatorSettings::new(EstimatorKind::Gs).with_tau(0.7);
    let state = BaselineState::new(0.9);
    let g = m.elbo(&x, &s, &state, &mut stream_rng(2, 0, streams::NOISE)).unwrap();
    check_param_gradients(
        &m.params.tensors,
        &g.grads,
        |p| {
            let mut mm = m.clone();
            mm.params.tensors = p.to_vec();
            Ok(mm.elbo(&x, &s, &state, &mut stream_rng(2, 0, streams::NOISE))?.mean_cost())
        },
        1e-6,
    )
    .unwrap()
}

#[test]
fn vae_relaxed_gradient_matches_finite_differences() {
    let e = vae_fd(LatentSpec::Categorical { k: 3, groups: 2 });
    assert!(e < 1e-4, "{e}");
    let e = vae_fd(LatentSpec::Bernoulli { units: 4 });
    assert!(e < 1e-4, "{e}");
}

#[test]
fn vae_kl_limits() {
    let latent = LatentSpec::Categorical { k: 3, groups: 2 };
    let mut m = tiny_vae(latent);
    let x = binary(4, 6, 1);
    // zero encoder weights: q is uniform, as is the zero-initialized prior
    m.params.tensors[0] = Tensor::zeros(&[6, 6]);
    assert!(m.kl(&x).unwrap().iter().all(|v| v.abs() < 1e-15));
    // one class per group near-certain
    m.params.tensors[1] = Tensor::vector(vec![40.0, 0.0, 0.0, 0.0, 40.0, 0.0]);
    for v in m.kl(&x).unwrap() {
        assert!((v - 2.0 * 3f64.ln()).abs() < 1e-12, "{v}");
    }
}

#[test]
fn vae_kl_vanishes_when_posterior_equals_prior() {
    let mut m = tiny_vae(LatentSpec::Bernoulli { units: 4 });
    m.params.tensors[0] = Tensor::zeros(&[6, 4]);
    m.params.tensors[1] = Tensor::vector(vec![0.3, -1.0, 2.0, 0.0]);
    let p = m.params.len() - 1;
    m.params.tensors[p] = Tensor::vector(vec![0.3, -1.0, 2.0, 0.0]);
    assert!(m.kl(&binary(3, 6, 2)).unwrap().iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn vae_eval_bound_is_below_zero_and_finite() {
    let m = tiny_vae(LatentSpec::Categorical { k: 3, groups: 2 });
    let b = m.eval_bound(&binary(6, 6, 3), 50, &mut stream_rng(1, 0, streams::EVAL)).unwrap();
    assert!(b.iter().all(|v| v.is_finite() && *v < 0.0));
}

fn ssvae_batch(k: usize) -> (Tensor, Tensor, Tensor) {
    let xl = binary(4, 6, 7);
    let yl = one_hot_labels(&[0, 1, 2 % k, 1 % k], k).unwrap();
    let xu = binary(5, 6, 8);
    (xl, yl, xu)
}

#[test]
fn ssvae_gradients_match_finite_differences() {
    let m = tiny_ssvae(3);
    let (xl, yl, xu) = ssvae_batch(3);
    let noise = SsvaeNoise::draw(&m.dims, 4, 5, &mut stream_rng(3, 0, streams::NOISE));
    for mode in [InferenceMode::Marginalize, InferenceMode::Gumbel] {
        let (_, grads) = m.objective_gradient(&xl, &yl, &xu, 0.3, mode, 0.7, &noise).unwrap();
        let e = check_param_gradients(
            &m.params.tensors,
            &grads,
            |p| {
                let mut mm = m.clone();
                mm.params.tensors = p.to_vec();
                Ok(-mm.objective(&xl, &yl, &xu, 0.3, mode, 0.7, &noise)?.total)
            },
            1e-6,
        )
        .unwrap();
        assert!(e < 1e-4, "{mode:?}: {e}");
    }
}

/// Direct evaluation of the labeled bound with plain loops.
fn labeled_bound_by_hand(m: &Ssvae, x: &[f64], y: usize, eps: &[f64]) -> f64 {
    let (ll, kl) = labeled_terms_by_hand(m, x, y, eps);
    ll - kl - (m.dims.classes as f64).ln()
}

fn labeled_terms_by_hand(m: &Ssvae, x: &[f64], y: usize, eps: &[f64]) -> (f64, f64) {
    let p = &m.params.tensors;
    let dense = |inp: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
        let (fi, fo) = (w.shape()[0], w.shape()[1]);
        (0..fo)
            .map(|j| b.data()[j] + (0..fi).map(|i| inp[i] * w.data()[i * fo + j]).sum::<f64>())
            .collect()
    };
    let relu = |v: Vec<f64>| v.into_iter().map(|a| a.max(0.0)).collect::<Vec<_>>();
    let k = m.dims.classes;
    let mut xy = x.to_vec();
    xy.extend((0..k).map(|c| if c == y { 1.0 } else { 0.0 }));
    // parameter order: cls.h, cls.out, enc.h, enc.mu, enc.log_sigma, dec.h, dec.out
    let h = relu(dense(&xy, &p[4], &p[5]));
    let mu = dense(&h, &p[6], &p[7]);
    let ls = dense(&h, &p[8], &p[9]);
    let z: Vec<f64> = (0..mu.len()).map(|i| mu[i] + ls[i].exp() * eps[i]).collect();
    let mut yz: Vec<f64> = (0..k).map(|c| if c == y { 1.0 } else { 0.0 }).collect();
    yz.extend(&z);
    let d = relu(dense(&yz, &p[10], &p[11]));
    let out = dense(&d, &p[12], &p[13]);
    let ll = bernoulli_log_likelihood_value(&out, x);
    let kl: f64 = (0..mu.len())
        .map(|i| 0.5 * (mu[i] * mu[i] + (2.0 * ls[i]).exp() - 2.0 * ls[i] - 1.0))
        .sum();
    (ll, kl)
}

#[test]
fn labeled_bound_matches_direct_formula_and_golden_value() {
    let m = tiny_ssvae(3);
    let x = binary(2, 6, 9);
    let y = one_hot_labels(&[2, 0], 3).unwrap();
    let eps = sample_eps(2, 2, 1);
    let b = m.labeled_bound(&x, &y, &eps).unwrap();
    assert!((b[0] - labeled_bound_by_hand(&m, x.row(0), 2, eps.row(0))).abs() < 1e-12);
    assert!((b[1] - labeled_bound_by_hand(&m, x.row(1), 0, eps.row(1))).abs() < 1e-12);
    // frozen after the first verified run
    assert!((b[0] - GOLDEN_LABELED[0]).abs() < 1e-10, "{b:?}");
    assert!((b[1] - GOLDEN_LABELED[1]).abs() < 1e-10, "{b:?}");
}

const GOLDEN_LABELED: [f64; 2] = [-5.381938031258993, -6.713633837705488];

fn sample_eps(n: usize, d: usize, seed: u64) -> Tensor {
    crate::distributions::sample_standard_normal(&[n, d], &mut stream_rng(seed, 0, streams::NOISE))
}

#[test]
fn standard_normal_posterior_has_zero_kl() {
    let mut m = tiny_ssvae(3);
    for i in 6..10 {
        m.params.tensors[i] = Tensor::zeros(m.params.tensors[i].shape());
    }
    let x = binary(2, 6, 1);
    let y = one_hot_labels(&[1, 1], 3).unwrap();
    let eps = sample_eps(2, 2, 4);
    let b = m.labeled_bound(&x, &y, &eps).unwrap();
    // mu = 0 and sigma = 1 leave log p(x|y,z) - log k
    for (r, br) in b.iter().enumerate() {
        let (ll, kl) = labeled_terms_by_hand(&m, x.row(r), 1, eps.row(r));
        assert_eq!(kl, 0.0);
        assert!((br - (ll - 3f64.ln())).abs() < 1e-12);
    }
}

#[test]
fn uniform_classifier_entropy_is_log_k() {
    let mut m = tiny_ssvae(4);
    m.params.tensors[2] = Tensor::zeros(m.params.tensors[2].shape());
    let x = binary(3, 6, 2);
    let eps = sample_eps(3, 2, 5);
    let gumbel = Tensor::zeros(&[3, 4]);
    let u = m.unlabeled_bound(&x, InferenceMode::Marginalize, 1.0, &eps, &gumbel).unwrap();
    let mut avg = [0.0; 3];
    for c in 0..4 {
        let l = m.labeled_bound(&x, &one_hot_labels(&[c; 3], 4).unwrap(), &eps).unwrap();
        for r in 0..3 {
            avg[r] += l[r] / 4.0;
        }
    }
    for r in 0..3 {
        assert!((u[r] - avg[r] - 4f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn two_class_marginalization_is_the_two_term_sum() {
    let m = tiny_ssvae(2);
    let x = binary(3, 6, 6);
    let eps = sample_eps(3, 2, 6);
    let u = m.unlabeled_bound(&x, InferenceMode::Marginalize, 1.0, &eps, &Tensor::zeros(&[3, 2])).unwrap();
    let q = m.class_probs(&x).unwrap();
    let l0 = m.labeled_bound(&x, &one_hot_labels(&[0; 3], 2).unwrap(), &eps).unwrap();
    let l1 = m.labeled_bound(&x, &one_hot_labels(&[1; 3], 2).unwrap(), &eps).unwrap();
    for r in 0..3 {
        let (q0, q1) = (q.row(r)[0], q.row(r)[1]);
        let h = -(q0 * q0.ln() + q1 * q1.ln());
        assert!((u[r] - (q0 * l0[r] + q1 * l1[r] + h)).abs() < 1e-12);
    }
}

#[test]
fn marginalized_bound_ignores_the_class_noise() {
    let m = tiny_ssvae(3);
    let x = binary(3, 6, 6);
    let eps = sample_eps(3, 2, 6);
    let g1 = crate::distributions::sample_gumbel(&[3, 3], &mut stream_rng(1, 0, 0));
    let g2 = crate::distributions::sample_gumbel(&[3, 3], &mut stream_rng(2, 0, 0));
    let a = m.unlabeled_bound(&x, InferenceMode::Marginalize, 1.0, &eps, &g1).unwrap();
    let b = m.unlabeled_bound(&x, InferenceMode::Marginalize, 1.0, &eps, &g2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn discretized_single_sample_bound_averages_to_the_marginal() {
    let m = tiny_ssvae(3);
    let x = binary(1, 6, 6);
    let eps = sample_eps(1, 2, 6);
    let exact = m.unlabeled_bound(&x, InferenceMode::Marginalize, 1.0, &eps, &Tensor::zeros(&[1, 3])).unwrap()[0];
    let mut rng = stream_rng(8, 0, streams::NOISE);
    let draws: Vec<f64> = (0..3000)
        .map(|_| {
            let gn = crate::distributions::sample_gumbel(&[1, 3], &mut rng);
            m.unlabeled_bound(&x, InferenceMode::StGumbel, 0.1, &eps, &gn).unwrap()[0]
        })
        .collect();
    let n = draws.len() as f64;
    let mean = pairwise_sum(&draws) / n;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - exact).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {exact}");
}

#[test]
fn objective_terms_add_up() {
    let m = tiny_ssvae(3);
    let (xl, yl, xu) = ssvae_batch(3);
    let noise = SsvaeNoise::draw(&m.dims, 4, 5, &mut stream_rng(3, 0, streams::NOISE));
    let t = m.objective(&xl, &yl, &xu, 0.5, InferenceMode::Gumbel, 0.9, &noise).unwrap();
    assert!((t.total - (t.labeled + t.unlabeled + t.discriminative)).abs() < 1e-10);
    let l = m.labeled_bound(&xl, &yl, &noise.labeled).unwrap();
    assert!((t.labeled - l.iter().sum::<f64>() / 4.0).abs() < 1e-10);
    let zero = m.objective(&xl, &yl, &xu, 0.0, InferenceMode::Gumbel, 0.9, &noise).unwrap();
    assert_eq!(zero.discriminative, 0.0);
    assert!((zero.total - (t.labeled + t.unlabeled)).abs() < 1e-10);
}

#[test]
fn perfect_classifier_zeroes_the_discriminative_term() {
    let mut m = tiny_ssvae(3);
    m.params.tensors[2] = Tensor::zeros(m.params.tensors[2].shape());
    m.params.tensors[3] = Tensor::vector(vec![0.0, 60.0, 0.0]);
    let xl = binary(3, 6, 1);
    let yl = one_hot_labels(&[1, 1, 1], 3).unwrap();
    let noise = SsvaeNoise::draw(&m.dims, 3, 0, &mut stream_rng(3, 0, 0));
    let t = m
        .objective(&xl, &yl, &Tensor::zeros(&[0, 6]), 1.0, InferenceMode::Marginalize, 1.0, &noise)
        .unwrap();
    assert!(t.discriminative.abs() < 1e-10);
}

#[test]
fn objective_input_errors() {
    let m = tiny_ssvae(3);
    let (xl, _, xu) = ssvae_batch(3);
    let noise = SsvaeNoise::draw(&m.dims, 4, 5, &mut stream_rng(3, 0, 0));
    let not_one_hot = Tensor::full(&[4, 3], 1.0 / 3.0);
    assert!(m.objective(&xl, &not_one_hot, &xu, 0.1, InferenceMode::Gumbel, 1.0, &noise).is_err());
    let empty = Tensor::zeros(&[0, 6]);
    let empty_y = Tensor::zeros(&[0, 3]);
    assert!(m.objective(&empty, &empty_y, &xu, 0.1, InferenceMode::Gumbel, 1.0, &noise).is_err());
    let cfg = SsvaeConfig {
        classes: 1,
        style: 2,
        alpha: 0.1,
        mode: InferenceMode::Gumbel,
    };
    assert!(cfg.validate().is_err());
    assert!(SsvaeConfig { classes: 10, alpha: 0.0, ..cfg }.validate().is_err());
    assert!(SsvaeConfig { classes: 10, ..cfg }.validate().is_ok());
    assert_eq!("st_gumbel".parse::<InferenceMode>().unwrap(), InferenceMode::StGumbel);
}

#[test]
fn single_class_model_runs_both_modes() {
    let m = tiny_ssvae(1);
    let x = binary(3, 6, 1);
    let eps = sample_eps(3, 2, 1);
    let gn = Tensor::zeros(&[3, 1]);
    let a = m.unlabeled_bound(&x, InferenceMode::Marginalize, 1.0, &eps, &gn).unwrap();
    let b = m.unlabeled_bound(&x, InferenceMode::Gumbel, 1.0, &eps, &gn).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn cost_model_shapes() {
    let c = ComponentCosts { d: 1.0, i: 2.0, g: 3.0 };
    assert_eq!(
        step_cost_model(1, InferenceMode::Marginalize, &c),
        step_cost_model(1, InferenceMode::Gumbel, &c)
    );
    assert_eq!(predicted_speedup(1, &c), 1.0);
    assert!((predicted_speedup(10, &c) - 51.0 / 6.0).abs() < 1e-12);
    assert!(predicted_speedup(100, &c) > predicted_speedup(10, &c));
    let m = tiny_ssvae(3);
    let costs = calibrate_component_costs(&m, &binary(8, 6, 1), 3, &mut stream_rng(1, 0, 0)).unwrap();
    assert!(costs.d > 0.0 && costs.i > 0.0 && costs.g > 0.0);
}

#[test]
fn score_function_training_step_runs_on_every_model() {
    let sbn = tiny_sbn(2);
    let vae = tiny_vae(LatentSpec::Categorical { k: 3, groups: 2 });
    for kind in EstimatorKind::ALL {
        let s = EstimatorSettings::new(kind).with_tau(0.5).with_slope(2.0);
        let mut state = BaselineState::new(0.9);
        if kind == EstimatorKind::Nvil {
            state = state.with_net(crate::estimators::BaselineNet::new(4, 3, 1e-3, &mut stream_rng(1, 0, 5)));
        }
        let x = binary(4, 8, 1);
        let g = sbn.train_gradient(&x, &s, &state, &mut stream_rng(1, 0, 2)).unwrap();
        assert_eq!(g.grads.len(), sbn.params.len());
        assert!(g.grads.iter().all(Tensor::all_finite));
        if kind == EstimatorKind::Nvil {
            state = BaselineState::new(0.9).with_net(crate::estimators::BaselineNet::new(6, 3, 1e-3, &mut stream_rng(1, 0, 5)));
        }
        let g = vae.train_gradient(&binary(4, 6, 1), &s, &state, &mut stream_rng(1, 0, 2)).unwrap();
        assert!(g.grads.iter().all(Tensor::all_finite));
    }
}
