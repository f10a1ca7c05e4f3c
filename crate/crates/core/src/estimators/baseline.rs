use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::rng::StreamRng;

/// Input-dependent baseline `b(x) = tanh(x W1 + b1) w2 + b2`.
///
/// `w2` and `b2` start at zero, so a fresh network predicts 0 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub lr: f64,
}

impl BaselineNet {
    pub fn new(input_dim: usize, hidden: usize, lr: f64, rng: &mut StreamRng) -> Self {
        let limit = (6.0 / (input_dim + hidden) as f64).sqrt();
        BaselineNet {
            w1: Tensor::from_fn(&[input_dim, hidden], |_| rng.gen_range(-limit..limit)),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, 1]),
            b2: Tensor::zeros(&[1]),
            lr,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    /// Predictions for the rows of `x` `[n, input_dim]`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, x, false)?.0;
        Ok(g.value(out).data().to_vec())
    }

    fn forward(&self, g: &mut Graph, x: &Tensor, trainable: bool) -> Result<(crate::graph::Var, [crate::graph::Var; 4])> {
        if x.rank() != 2 || x.shape()[1] != self.input_dim() {
            return Err(Error::shape(
                "baseline_net",
                format!("input {:?} for input dim {}", x.shape(), self.input_dim()),
            ));
        }
        let leaf = |g: &mut Graph, t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let w1 = leaf(g, &self.w1);
        let b1 = leaf(g, &self.b1);
        let w2 = leaf(g, &self.w2);
        let b2 = leaf(g, &self.b2);
        let xv = g.constant(x.clone());
        let pre = g.matmul(xv, w1)?;
        let pre = g.add_row(pre, b1)?;
        let h = g.tanh(pre)?;
        let o = g.matmul(h, w2)?;
        let o = g.add_row(o, b2)?;
        let out = g.reshape(o, &[x.shape()[0]])?;
        Ok((out, [w1, b1, w2, b2]))
    }

    /// One SGD step on `mean (b(x) - target)² / 2`.
    fn trained(&self, x: &Tensor, target: &[f64]) -> Result<BaselineNet> {
        let mut g = Graph::new();
        let (out, leaves) = self.forward(&mut g, x, true)?;
        let t = g.constant(Tensor::vector(target.to_vec()));
        let err = g.sub(out, t)?;
        let sq = g.mul(err, err)?;
        let m = g.mean(sq, 0)?;
        let loss = g.scale(m, 0.5)?;
        let grads = g.backward(loss)?;
        let step = |p: &Tensor, v| -> Result<Tensor> {
            let gr = grads.get_or_zeros(v, p.shape());
            p.zip_map(&gr, |a, b| a - self.lr * b)
        };
        let next = BaselineNet {
            w1: step(&self.w1, leaves[0])?,
            b1: step(&self.b1, leaves[1])?,
            w2: step(&self.w2, leaves[2])?,
            b2: step(&self.b2, leaves[3])?,
            lr: self.lr,
        };
        if [&next.w1, &next.b1, &next.w2, &next.b2].iter().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite("baseline network update".into()));
        }
        Ok(next)
    }
}

/// Running statistics of the cost `f` plus the optional NVIL network.
/// Updates are pure: [`BaselineState::observe`] returns a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    /// Moving average `f̄`.
    pub mean: f64,
    /// Moving variance `σ_f²`.
    pub var: f64,
    pub decay: f64,
    pub net: Option<BaselineNet>,
    /// Number of observations folded in.
    pub version: u64,
}

impl BaselineState {
    pub fn new(decay: f64) -> Self {
        BaselineState {
            mean: 0.0,
            var: 0.0,
            decay,
            net: None,
            version: 0,
        }
    }

    pub fn with_net(mut self, net: BaselineNet) -> Self {
        self.net = Some(net);
        self
    }

    /// `max(1, σ_f)`.
    pub fn normalizer(&self) -> f64 {
        self.var.sqrt().max(1.0)
    }

    /// Input-dependent part of the baseline for each row of `x`; zeros when
    /// there is no network.
    pub fn input_baseline(&self, x: Option<&Tensor>, n: usize) -> Result<Vec<f64>> {
        match (&self.net, x) {
            (None, _) => Ok(vec![0.0; n]),
            (Some(net), Some(x)) => {
                let b = net.predict(x)?;
                if b.len() != n {
                    return Err(Error::shape("baseline", format!("{} inputs for {n} costs", b.len())));
                }
                Ok(b)
            }
            (Some(_), None) => Err(Error::InvalidArgument("baseline network needs a conditioning input".into())),
        }
    }

    /// Fold in a batch of costs: `f̄ ← d f̄ + (1-d) mean f`,
    /// `σ² ← d σ² + (1-d) mean (f - f̄_old)²`, and one regression step of the
    /// network towards `f - f̄_old`.
    pub fn observe(&self, costs: &[f64], x: Option<&Tensor>) -> Result<BaselineState> {
        if costs.is_empty() {
            return Ok(self.clone());
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("learning signal".into()));
        }
        let n = costs.len() as f64;
        let d = self.decay;
        let batch_mean = costs.iter().sum::<f64>() / n;
        let batch_var = costs.iter().map(|c| (c - self.mean).powi(2)).sum::<f64>() / n;
        let net = match (&self.net, x) {
            (Some(net), Some(x)) => {
                let target: Vec<f64> = costs.iter().map(|c| c - self.mean).collect();
                Some(net.trained(x, &target)?)
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument("baseline network needs a conditioning input".into()))
            }
            (None, _) => None,
        };
        Ok(BaselineState {
            mean: d * self.mean + (1.0 - d) * batch_mean,
            var: d * self.var + (1.0 - d) * batch_var,
            decay: d,
            net,
            version: self.version + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn observe_is_pure_and_follows_the_recursion() {
        let s = BaselineState::new(0.9);
        let t = s.observe(&[1.0, 3.0], None).unwrap();
        assert_eq!(s.version, 0);
        assert!((t.mean - 0.2).abs() < 1e-15);
        assert!((t.var - 0.5).abs() < 1e-15);
        assert_eq!(t.version, 1);
        let u = t.observe(&[2.0], None).unwrap();
        assert!((u.mean - (0.18 + 0.2)).abs() < 1e-15);
        assert!((u.var - (0.45 + 0.1 * 1.8f64.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn normalizer_is_identity_for_small_variance() {
        let mut s = BaselineState::new(0.9);
        s.var = 0.81;
        assert_eq!(s.normalizer(), 1.0);
        s.var = 4.0;
        assert_eq!(s.normalizer(), 2.0);
    }

    #[test]
    fn fresh_network_predicts_zero_and_learns_a_constant() {
        let mut rng = stream_rng(0, 0, 0);
        let net = BaselineNet::new(1, 8, 0.1, &mut rng);
        let x = Tensor::full(&[4, 1], 1.0);
        assert_eq!(net.predict(&x).unwrap(), vec![0.0; 4]);
        let mut s = BaselineState::new(0.0).with_net(net);
        for _ in 0..300 {
            // decay 0 keeps f̄ equal to the last batch mean
            s = s.observe(&[2.0; 4], Some(&x)).unwrap();
        }
        // the network regresses f - f̄_old, which tends to 0
        let b = s.input_baseline(Some(&x), 4).unwrap();
        assert!(b.iter().all(|v| v.abs() < 0.05), "{b:?}");
        assert_eq!(s.mean, 2.0);
    }

    #[test]
    fn network_requires_input() {
        let mut rng = stream_rng(0, 0, 0);
        let s = BaselineState::new(0.9).with_net(BaselineNet::new(2, 3, 0.1, &mut rng));
        assert!(s.observe(&[1.0], None).is_err());
        assert!(s.input_baseline(None, 1).is_err());
    }

    #[test]
    fn non_finite_signal_is_rejected() {
        assert!(BaselineState::new(0.9).observe(&[f64::NAN], None).is_err());
    }
}
