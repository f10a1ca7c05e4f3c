use serde::{Deserialize, Serialize};

use super::{bernoulli_log_likelihood, log_mean_exp_groups, repeat_rows, Dense, EstimatorModel, LatentSpec, LayerSpec, ParamStore};
use crate::error::{Error, Result};
use crate::estimators::{stochastic_gradient, BaselineState, EstimatorSettings, LatentKind, SiteGradient, Sites};
use crate::graph::{Graph, Tensor, Var};
use crate::rng::StreamRng;

/// Single latent layer between a linear encoder and a Bernoulli decoder,
/// with a learned factorized prior over the latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input: usize,
    pub latent: LatentSpec,
}

impl VaeArch {
    /// `784-200-784`.
    pub fn bernoulli_full() -> Self {
        VaeArch {
            input: 784,
            latent: LatentSpec::Bernoulli { units: 200 },
        }
    }

    /// `784-(20×10)-784`.
    pub fn categorical_full() -> Self {
        VaeArch {
            input: 784,
            latent: LatentSpec::Categorical { k: 10, groups: 20 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub arch: VaeArch,
    encoder: Dense,
    decoder: Dense,
    prior: usize,
    pub params: ParamStore,
}

/// Per-row `KL(q || p)` between factorized discrete distributions given by
/// logits `q [n, u]` and `p [n, u]`.
pub fn discrete_kl(g: &mut Graph, kind: LatentKind, q: Var, p: Var) -> Result<Var> {
    let [n, u] = *g.shape(q) else {
        return Err(Error::shape("discrete_kl", "logits must be [n, units]"));
    };
    match kind {
        LatentKind::Bernoulli => {
            // log q = -softplus(-a), log(1 - q) = -softplus(a)
            let qm = g.sigmoid(q)?;
            let nq = g.neg(q)?;
            let np = g.neg(p)?;
            let sp_nq = g.softplus(nq)?;
            let sp_np = g.softplus(np)?;
            let sp_q = g.softplus(q)?;
            let sp_p = g.softplus(p)?;
            let on = g.sub(sp_np, sp_nq)?;
            let off = g.sub(sp_p, sp_q)?;
            let a = g.mul(qm, on)?;
            let nqm = g.neg(qm)?;
            let one_minus = g.add_scalar(nqm, 1.0)?;
            let b = g.mul(one_minus, off)?;
            let s = g.add(a, b)?;
            g.sum(s, 1)
        }
        LatentKind::Categorical { k } => {
            let qg = g.reshape(q, &[n, u / k, k])?;
            let pg = g.reshape(p, &[n, u / k, k])?;
            let lq = g.log_softmax(qg, 2)?;
            let lp = g.log_softmax(pg, 2)?;
            let pq = g.exp(lq)?;
            let d = g.sub(lq, lp)?;
            let t = g.mul(pq, d)?;
            let t = g.reshape(t, &[n, u])?;
            g.sum(t, 1)
        }
    }
}

impl Vae {
    pub fn new(arch: VaeArch, rng: &mut StreamRng) -> Result<Self> {
        let layer = LayerSpec::new(arch.input, arch.latent);
        layer.validate()?;
        let u = arch.latent.units();
        let mut params = ParamStore::new();
        let encoder = params.dense("enc", arch.input, u, rng);
        let decoder = params.dense("dec", u, arch.input, rng);
        let prior = params.push("prior", Tensor::zeros(&[u]));
        Ok(Vae {
            arch,
            encoder,
            decoder,
            prior,
            params,
        })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.arch.input {
            return Err(Error::shape("vae", format!("expected [n, {}], got {:?}", self.arch.input, x.shape())));
        }
        Ok(())
    }

    fn prior_logits(&self, g: &mut Graph, pv: &[Var], n: usize) -> Result<Var> {
        let z = g.constant(Tensor::zeros(&[n, self.arch.latent.units()]));
        g.add_row(z, pv[self.prior])
    }

    /// Per-row negative objective `-log p(x | z) + KL(q(z|x) || p(z))`, with
    /// the analytic discrete KL whatever the sample type.
    pub fn forward(&self, g: &mut Graph, pv: &[Var], x: &Tensor, sites: &mut Sites<'_>) -> Result<Var> {
        let n = x.shape()[0];
        let xv = g.constant(x.clone());
        let q = self.encoder.forward(g, pv, xv)?;
        let kind = self.arch.latent.kind();
        let z = sites.sample(g, q, kind)?;
        let out = self.decoder.forward(g, pv, z)?;
        let ll = bernoulli_log_likelihood(g, out, xv)?;
        let p = self.prior_logits(g, pv, n)?;
        let kl = discrete_kl(g, kind, q, p)?;
        g.sub(kl, ll)
    }

    /// Negative ELBO and parameter gradients from the configured estimator.
    pub fn elbo(
        &self,
        x: &Tensor,
        settings: &EstimatorSettings,
        state: &BaselineState,
        rng: &mut StreamRng,
    ) -> Result<SiteGradient> {
        self.check(x)?;
        stochastic_gradient(
            |g, pv, sites| self.forward(g, pv, x, sites),
            &self.params.tensors,
            settings,
            state,
            Some(x),
            rng,
        )
    }

    /// Per-row KL term alone.
    pub fn kl(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut g = Graph::new();
        let pv: Vec<Var> = self.params.tensors.iter().map(|t| g.constant(t.clone())).collect();
        let xv = g.constant(x.clone());
        let q = self.encoder.forward(&mut g, &pv, xv)?;
        let p = self.prior_logits(&mut g, &pv, x.shape()[0])?;
        let kl = discrete_kl(&mut g, self.arch.latent.kind(), q, p)?;
        Ok(g.value(kl).data().to_vec())
    }

    /// Per-example `log (1/m) Σ_i p(x, z_i) / q(z_i | x)` with discrete `z_i ~ q`.
    pub fn eval_bound(&self, x: &Tensor, m: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.check(x)?;
        if m < 1 {
            return Err(Error::InvalidArgument("eval needs m >= 1 samples".into()));
        }
        let kind = self.arch.latent.kind();
        let n = x.shape()[0];
        let per = (10_000 / m).max(1);
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + per).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let xs = repeat_rows(&x.select_rows(&idx), m);
            let mut g = Graph::new();
            let pv: Vec<Var> = self.params.tensors.iter().map(|t| g.constant(t.clone())).collect();
            let xv = g.constant(xs.clone());
            let q = self.encoder.forward(&mut g, &pv, xv)?;
            let mut sites = Sites::discrete(rng);
            let z = sites.sample(&mut g, q, kind)?;
            let dec = self.decoder.forward(&mut g, &pv, z)?;
            let ll = bernoulli_log_likelihood(&mut g, dec, xv)?;
            let p = self.prior_logits(&mut g, &pv, xs.shape()[0])?;
            let lp = kind.log_prob_node(&mut g, p, z)?;
            let lq = kind.log_prob_node(&mut g, q, z)?;
            let a = g.add(ll, lp)?;
            let w = g.sub(a, lq)?;
            out.extend(log_mean_exp_groups(g.value(w).data(), m));
            start = end;
        }
        Ok(out)
    }
}

impl EstimatorModel for Vae {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn conditioning(&self, images: &Tensor) -> Result<Tensor> {
        Ok(images.clone())
    }

    fn conditioning_dim(&self) -> usize {
        self.arch.input
    }

    fn train_gradient(
        &self,
        images: &Tensor,
        settings: &EstimatorSettings,
        state: &BaselineState,
        rng: &mut StreamRng,
    ) -> Result<SiteGradient> {
        self.elbo(images, settings, state, rng)
    }

    fn eval_loss(&self, images: &Tensor, m: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(self.eval_bound(images, m, rng)?.into_iter().map(|v| -v).collect())
    }
}
