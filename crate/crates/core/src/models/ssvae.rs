use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{bernoulli_log_likelihood, Dense, ParamStore};
use crate::distributions::{gaussian_kl_node, gaussian_node, gumbel_softmax_node, sample_gumbel, sample_standard_normal, st_gumbel_softmax_node};
use crate::error::{Error, Result};
use crate::graph::{argmax, Graph, Tensor, Var};
use crate::rng::StreamRng;

/// How the unlabeled bound treats the unobserved class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Exact sum over all classes.
    Marginalize,
    /// One Gumbel-Softmax sample.
    Gumbel,
    /// One straight-through Gumbel-Softmax sample.
    StGumbel,
}

impl InferenceMode {
    pub fn name(self) -> &'static str {
        match self {
            InferenceMode::Marginalize => "marginalize",
            InferenceMode::Gumbel => "gumbel",
            InferenceMode::StGumbel => "st_gumbel",
        }
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginalize" => Ok(InferenceMode::Marginalize),
            "gumbel" => Ok(InferenceMode::Gumbel),
            "st_gumbel" => Ok(InferenceMode::StGumbel),
            other => Err(Error::InvalidArgument(format!("unknown inference mode `{other}`"))),
        }
    }
}

/// Layer sizes. `classes = 1` is accepted here (the speed benchmark needs
/// it); [`SsvaeConfig`] requires at least two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsvaeDims {
    pub input: usize,
    pub classes: usize,
    pub style: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsvaeConfig {
    pub classes: usize,
    pub style: usize,
    pub alpha: f64,
    pub mode: InferenceMode,
}

impl SsvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.style == 0 {
            return Err(Error::Config("style dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Explicit noise for one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SsvaeNoise {
    /// Gaussian `ε` for the labeled batch, `[n_l, style]`.
    pub labeled: Tensor,
    /// Gaussian `ε` for the unlabeled batch, `[n_u, style]`; marginalization
    /// reuses it for every class.
    pub unlabeled: Tensor,
    /// Gumbel noise for the unlabeled class sample, `[n_u, classes]`.
    pub gumbel: Tensor,
}

impl SsvaeNoise {
    pub fn draw(dims: &SsvaeDims, n_labeled: usize, n_unlabeled: usize, rng: &mut StreamRng) -> Self {
        SsvaeNoise {
            labeled: sample_standard_normal(&[n_labeled, dims.style], rng),
            unlabeled: sample_standard_normal(&[n_unlabeled, dims.style], rng),
            gumbel: sample_gumbel(&[n_unlabeled, dims.classes], rng),
        }
    }
}

/// The three batch-mean terms of the objective and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub labeled: f64,
    pub unlabeled: f64,
    /// `α · mean log q(y | x)` over the labeled batch.
    pub discriminative: f64,
    pub total: f64,
}

/// Semi-supervised VAE: classifier `q(y|x)`, Gaussian encoder
/// `q(z|x,y)`, Bernoulli decoder `p(x|y,z)`, each one ReLU hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Ssvae {
    pub dims: SsvaeDims,
    pub(crate) cls: [Dense; 2],
    pub(crate) enc: Dense,
    pub(crate) enc_mu: Dense,
    pub(crate) enc_ls: Dense,
    pub(crate) dec: [Dense; 2],
    pub params: ParamStore,
}

/// Labels as an `[n, k]` one-hot matrix.
pub fn one_hot_labels(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * k];
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {k} classes")));
        }
        data[r * k + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), k], data)
}

fn check_one_hot(y: &Tensor, k: usize) -> Result<()> {
    if y.rank() != 2 || y.shape()[1] != k {
        return Err(Error::shape("ssvae", format!("labels must be [n, {k}], got {:?}", y.shape())));
    }
    for r in 0..y.shape()[0] {
        let row = y.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!("label row {r} is not one-hot")));
        }
    }
    Ok(())
}

impl Ssvae {
    pub fn new(dims: SsvaeDims, rng: &mut StreamRng) -> Result<Self> {
        if dims.classes == 0 || dims.style == 0 || dims.hidden == 0 || dims.input == 0 {
            return Err(Error::Config(format!("invalid SSVAE dims {dims:?}")));
        }
        let SsvaeDims { input, classes: k, style, hidden } = dims;
        let mut params = ParamStore::new();
        let cls = [params.dense("cls.h", input, hidden, rng), params.dense("cls.out", hidden, k, rng)];
        let enc = params.dense("enc.h", input + k, hidden, rng);
        let enc_mu = params.dense("enc.mu", hidden, style, rng);
        let enc_ls = params.dense("enc.log_sigma", hidden, style, rng);
        let dec = [params.dense("dec.h", k + style, hidden, rng), params.dense("dec.out", hidden, input, rng)];
        Ok(Ssvae {
            dims,
            cls,
            enc,
            enc_mu,
            enc_ls,
            dec,
            params,
        })
    }

    pub fn from_config(config: &SsvaeConfig, input: usize, hidden: usize, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        Ssvae::new(
            SsvaeDims {
                input,
                classes: config.classes,
                style: config.style,
                hidden,
            },
            rng,
        )
    }

    fn check_x(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.dims.input {
            return Err(Error::shape("ssvae", format!("expected [n, {}], got {:?}", self.dims.input, x.shape())));
        }
        Ok(())
    }

    /// Classifier logits `[n, k]`.
    pub fn classifier_logits(&self, g: &mut Graph, pv: &[Var], x: Var) -> Result<Var> {
        let h = self.cls[0].forward(g, pv, x)?;
        let h = g.relu(h)?;
        self.cls[1].forward(g, pv, h)
    }

    /// Per-row `E_q(z|x,y)[log p(x|y,z)] - KL(q(z|x,y) || N(0, I)) + log p(y)`,
    /// single sample with noise `eps`, uniform `p(y)`.
    pub fn labeled_bound_node(&self, g: &mut Graph, pv: &[Var], x: Var, y: Var, eps: &Tensor) -> Result<Var> {
        let xy = g.concat(&[x, y], 1)?;
        let h = self.enc.forward(g, pv, xy)?;
        let h = g.relu(h)?;
        let mu = self.enc_mu.forward(g, pv, h)?;
        let ls = self.enc_ls.forward(g, pv, h)?;
        let z = gaussian_node(g, mu, ls, eps.clone())?;
        let yz = g.concat(&[y, z], 1)?;
        let d = self.dec[0].forward(g, pv, yz)?;
        let d = g.relu(d)?;
        let out = self.dec[1].forward(g, pv, d)?;
        let ll = bernoulli_log_likelihood(g, out, x)?;
        let kl = gaussian_kl_node(g, mu, ls)?;
        let b = g.sub(ll, kl)?;
        g.add_scalar(b, -(self.dims.classes as f64).ln())
    }

    /// Per-row unlabeled bound. Marginalization sums the labeled bound over
    /// every class weighted by `q(y|x)`; the sampling modes evaluate it at
    /// one relaxed sample. The entropy of `q(y|x)` is analytic in all modes.
    #[allow(clippy::too_many_arguments)]
    pub fn unlabeled_bound_node(
        &self,
        g: &mut Graph,
        pv: &[Var],
        x: Var,
        mode: InferenceMode,
        tau: f64,
        eps: &Tensor,
        gumbel: &Tensor,
    ) -> Result<Var> {
        let k = self.dims.classes;
        let n = g.shape(x)[0];
        let logits = self.classifier_logits(g, pv, x)?;
        let lq = g.log_softmax(logits, 1)?;
        let q = g.exp(lq)?;
        let qlq = g.mul(q, lq)?;
        let neg_h = g.sum(qlq, 1)?;
        let body = match mode {
            InferenceMode::Marginalize => {
                let mut cols = Vec::with_capacity(k);
                for c in 0..k {
                    let y = g.constant(one_hot_labels(&vec![c; n], k)?);
                    let l = self.labeled_bound_node(g, pv, x, y, eps)?;
                    cols.push(g.reshape(l, &[n, 1])?);
                }
                let all = if k == 1 { cols[0] } else { g.concat(&cols, 1)? };
                let weighted = g.mul(q, all)?;
                g.sum(weighted, 1)?
            }
            InferenceMode::Gumbel | InferenceMode::StGumbel => {
                if gumbel.shape() != [n, k] {
                    return Err(Error::shape("ssvae", format!("gumbel noise {:?} for [{n}, {k}]", gumbel.shape())));
                }
                let y = if mode == InferenceMode::Gumbel {
                    gumbel_softmax_node(g, logits, tau, gumbel.clone())?
                } else {
                    st_gumbel_softmax_node(g, logits, tau, gumbel.clone())?
                };
                self.labeled_bound_node(g, pv, x, y, eps)?
            }
        };
        g.sub(body, neg_h)
    }

    fn constants(&self, g: &mut Graph) -> Vec<Var> {
        self.params.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Per-row labeled bound values.
    pub fn labeled_bound(&self, x: &Tensor, y: &Tensor, eps: &Tensor) -> Result<Vec<f64>> {
        self.check_x(x)?;
        check_one_hot(y, self.dims.classes)?;
        let mut g = Graph::new();
        let pv = self.constants(&mut g);
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let b = self.labeled_bound_node(&mut g, &pv, xv, yv, eps)?;
        Ok(g.value(b).data().to_vec())
    }

    /// Per-row unlabeled bound values.
    pub fn unlabeled_bound(&self, x: &Tensor, mode: InferenceMode, tau: f64, eps: &Tensor, gumbel: &Tensor) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let mut g = Graph::new();
        let pv = self.constants(&mut g);
        let xv = g.constant(x.clone());
        let b = self.unlabeled_bound_node(&mut g, &pv, xv, mode, tau, eps, gumbel)?;
        Ok(g.value(b).data().to_vec())
    }

    /// `q(y | x)` rows.
    pub fn class_probs(&self, x: &Tensor) -> Result<Tensor> {
        self.check_x(x)?;
        let mut g = Graph::new();
        let pv = self.constants(&mut g);
        let xv = g.constant(x.clone());
        let l = self.classifier_logits(&mut g, &pv, xv)?;
        let p = g.softmax(l, 1)?;
        Ok(g.value(p).clone())
    }

    /// Fraction of rows whose most probable class is the label.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let p = self.class_probs(x)?;
        if labels.is_empty() {
            return Ok(0.0);
        }
        let hits = labels.iter().enumerate().filter(|(r, &y)| argmax(p.row(*r)) == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    #[allow(clippy::too_many_arguments)]
    fn objective_node(
        &self,
        g: &mut Graph,
        pv: &[Var],
        xl: &Tensor,
        yl: &Tensor,
        xu: &Tensor,
        alpha: f64,
        mode: InferenceMode,
        tau: f64,
        noise: &SsvaeNoise,
    ) -> Result<(Var, Var, Var, Var)> {
        if xl.shape().first() == Some(&0) || xl.rank() != 2 {
            return Err(Error::InvalidArgument("labeled batch is empty".into()));
        }
        self.check_x(xl)?;
        self.check_x(xu)?;
        check_one_hot(yl, self.dims.classes)?;
        let xlv = g.constant(xl.clone());
        let ylv = g.constant(yl.clone());
        let l = self.labeled_bound_node(g, pv, xlv, ylv, &noise.labeled)?;
        let l = g.mean(l, 0)?;
        let xuv = g.constant(xu.clone());
        let u = if xu.shape()[0] == 0 {
            g.constant(Tensor::scalar(0.0))
        } else {
            let u = self.unlabeled_bound_node(g, pv, xuv, mode, tau, &noise.unlabeled, &noise.gumbel)?;
            g.mean(u, 0)?
        };
        let logits = self.classifier_logits(g, pv, xlv)?;
        let lq = g.log_softmax(logits, 1)?;
        let picked = g.mul(lq, ylv)?;
        let per = g.sum(picked, 1)?;
        let d = g.mean(per, 0)?;
        let d = g.scale(d, alpha)?;
        let lu = g.add(l, u)?;
        let total = g.add(lu, d)?;
        Ok((l, u, d, total))
    }

    /// Objective `J = mean L + mean U + α mean log q(y|x)` (to maximize).
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &self,
        xl: &Tensor,
        yl: &Tensor,
        xu: &Tensor,
        alpha: f64,
        mode: InferenceMode,
        tau: f64,
        noise: &SsvaeNoise,
    ) -> Result<ObjectiveTerms> {
        let mut g = Graph::new();
        let pv = self.constants(&mut g);
        let (l, u, d, t) = self.objective_node(&mut g, &pv, xl, yl, xu, alpha, mode, tau, noise)?;
        Ok(ObjectiveTerms {
            labeled: g.value(l).item()?,
            unlabeled: g.value(u).item()?,
            discriminative: g.value(d).item()?,
            total: g.value(t).item()?,
        })
    }

    /// Objective terms and the gradient of `-J` for each parameter.
    #[allow(clippy::too_many_arguments)]
    pub fn objective_gradient(
        &self,
        xl: &Tensor,
        yl: &Tensor,
        xu: &Tensor,
        alpha: f64,
        mode: InferenceMode,
        tau: f64,
        noise: &SsvaeNoise,
    ) -> Result<(ObjectiveTerms, Vec<Tensor>)> {
        let mut g = Graph::new();
        let pv = self.params.leaves(&mut g);
        let (l, u, d, t) = self.objective_node(&mut g, &pv, xl, yl, xu, alpha, mode, tau, noise)?;
        let terms = ObjectiveTerms {
            labeled: g.value(l).item()?,
            unlabeled: g.value(u).item()?,
            discriminative: g.value(d).item()?,
            total: g.value(t).item()?,
        };
        if !terms.total.is_finite() {
            return Err(Error::NonFinite("SSVAE objective".into()));
        }
        let loss = g.neg(t)?;
        let grads = g.backward(loss)?;
        let out = pv
            .iter()
            .zip(&self.params.tensors)
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect();
        Ok((terms, out))
    }

    /// Unlabeled step only, for timing: forward and backward of `-mean U`.
    pub fn unlabeled_step(&self, xu: &Tensor, mode: InferenceMode, tau: f64, noise: &SsvaeNoise) -> Result<f64> {
        let mut g = Graph::new();
        let pv = self.params.leaves(&mut g);
        let xv = g.constant(xu.clone());
        let u = self.unlabeled_bound_node(&mut g, &pv, xv, mode, tau, &noise.unlabeled, &noise.gumbel)?;
        let u = g.mean(u, 0)?;
        let loss = g.neg(u)?;
        let v = g.value(u).item()?;
        g.backward(loss)?;
        Ok(v)
    }
}
