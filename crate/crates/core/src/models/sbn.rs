use serde::{Deserialize, Serialize};

use super::{
    bernoulli_log_likelihood, log_mean_exp_groups, repeat_rows, Dense, EstimatorModel, LatentSpec, LayerSpec,
    ParamStore,
};
use crate::error::{Error, Result};
use crate::estimators::{stochastic_gradient, BaselineState, EstimatorSettings, SiteGradient, Sites};
use crate::graph::{Graph, Tensor, Var};
use crate::rng::StreamRng;

/// Stochastic binary network predicting the lower half of an image from
/// the upper half through stochastic hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbnArch {
    /// Pixels in the upper half.
    pub input: usize,
    pub hidden: Vec<LatentSpec>,
    /// Pixels in the lower half.
    pub output: usize,
}

impl SbnArch {
    /// `392-200-200-392`.
    pub fn bernoulli_full() -> Self {
        SbnArch {
            input: 392,
            hidden: vec![LatentSpec::Bernoulli { units: 200 }; 2],
            output: 392,
        }
    }

    /// `392-(20×10)-(20×10)-392`.
    pub fn categorical_full() -> Self {
        SbnArch {
            input: 392,
            hidden: vec![LatentSpec::Categorical { k: 10, groups: 20 }; 2],
            output: 392,
        }
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        if self.hidden.is_empty() || self.input == 0 || self.output == 0 {
            return Err(Error::Config("SBN needs inputs, outputs and a stochastic layer".into()));
        }
        let mut prev = self.input;
        let mut out = Vec::with_capacity(self.hidden.len());
        for h in &self.hidden {
            let l = LayerSpec::new(prev, *h);
            l.validate()?;
            prev = l.output;
            out.push(l);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sbn {
    pub arch: SbnArch,
    layers: Vec<LayerSpec>,
    dense: Vec<Dense>,
    readout: Dense,
    pub params: ParamStore,
}

impl Sbn {
    pub fn new(arch: SbnArch, rng: &mut StreamRng) -> Result<Self> {
        let layers = arch.layers()?;
        let mut params = ParamStore::new();
        let dense = layers
            .iter()
            .enumerate()
            .map(|(i, l)| params.dense(&format!("h{i}"), l.input, l.output, rng))
            .collect();
        let last = layers.last().expect("at least one layer").output;
        let readout = params.dense("out", last, arch.output, rng);
        Ok(Sbn {
            arch,
            layers,
            dense,
            readout,
            params,
        })
    }

    /// Split `[n, input + output]` images into upper and lower halves.
    pub fn split(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = self.arch.input + self.arch.output;
        if images.rank() != 2 || images.shape()[1] != d {
            return Err(Error::shape("sbn", format!("expected [n, {d}], got {:?}", images.shape())));
        }
        let n = images.shape()[0];
        let (mut up, mut low) = (Vec::with_capacity(n * self.arch.input), Vec::with_capacity(n * self.arch.output));
        for r in 0..n {
            let row = images.row(r);
            up.extend_from_slice(&row[..self.arch.input]);
            low.extend_from_slice(&row[self.arch.input..]);
        }
        Ok((
            Tensor::new(vec![n, self.arch.input], up)?,
            Tensor::new(vec![n, self.arch.output], low)?,
        ))
    }

    /// Per-row `-log p(x_lower | h)` with one pass through the stochastic
    /// layers.
    pub fn forward(&self, g: &mut Graph, pv: &[Var], upper: &Tensor, lower: &Tensor, sites: &mut Sites<'_>) -> Result<Var> {
        let mut h = g.constant(upper.clone());
        for (l, d) in self.layers.iter().zip(&self.dense) {
            let logits = d.forward(g, pv, h)?;
            h = sites.sample(g, logits, l.latent.kind())?;
        }
        let out = self.readout.forward(g, pv, h)?;
        let x = g.constant(lower.clone());
        let ll = bernoulli_log_likelihood(g, out, x)?;
        g.neg(ll)
    }

    /// Training loss: single-sample negative log-likelihood with
    /// gradients from the configured estimator.
    pub fn loss(
        &self,
        upper: &Tensor,
        lower: &Tensor,
        settings: &EstimatorSettings,
        state: &BaselineState,
        rng: &mut StreamRng,
    ) -> Result<SiteGradient> {
        stochastic_gradient(
            |g, pv, sites| self.forward(g, pv, upper, lower, sites),
            &self.params.tensors,
            settings,
            state,
            Some(upper),
            rng,
        )
    }

    /// Per-example `log (1/m) Σ_i p(x_lower | h_i)` with discrete `h_i`.
    pub fn eval_bound(&self, upper: &Tensor, lower: &Tensor, m: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        if m < 1 {
            return Err(Error::InvalidArgument("eval needs m >= 1 samples".into()));
        }
        let n = upper.shape()[0];
        // chunks keep the tiled batch near 10^4 rows
        let per = (10_000 / m).max(1);
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + per).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let up = repeat_rows(&upper.select_rows(&idx), m);
            let low = repeat_rows(&lower.select_rows(&idx), m);
            let mut g = Graph::new();
            let pv: Vec<Var> = self.params.tensors.iter().map(|t| g.constant(t.clone())).collect();
            let mut sites = Sites::discrete(rng);
            let cost = self.forward(&mut g, &pv, &up, &low, &mut sites)?;
            let ll: Vec<f64> = g.value(cost).data().iter().map(|c| -c).collect();
            out.extend(log_mean_exp_groups(&ll, m));
            start = end;
        }
        Ok(out)
    }
}

impl EstimatorModel for Sbn {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn conditioning(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.split(images)?.0)
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
        let (up, low) = self.split(images)?;
        self.loss(&up, &low, settings, state, rng)
    }

    fn eval_loss(&self, images: &Tensor, m: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let (up, low) = self.split(images)?;
        Ok(self.eval_bound(&up, &low, m, rng)?.into_iter().map(|v| -v).collect())
    }
}
