use super::{BaselineState, EstimatorKind, EstimatorSettings, LatentKind};
use crate::distributions::{
    gumbel_softmax_node, relaxed_bernoulli_node, st_gumbel_softmax_node, st_relaxed_bernoulli_node,
};
use crate::error::{Error, Result};
use crate::graph::{DistTag, Graph, Tensor, Var};
use crate::rng::StreamRng;

/// Expansion point of a first-order Taylor baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expansion {
    /// `1/2` for Bernoulli units, `π` for categorical groups.
    Darn,
    /// `E[z]` for both.
    Mean,
}

impl Expansion {
    fn point(self, kind: LatentKind, logits: &Tensor) -> Tensor {
        match (self, kind) {
            (Expansion::Darn, LatentKind::Bernoulli) => Tensor::full(logits.shape(), 0.5),
            _ => kind.mean_value(logits),
        }
    }
}

/// What one stochastic layer produced during a sampling pass.
#[derive(Debug, Clone)]
pub struct SiteRecord {
    pub kind: LatentKind,
    pub logits: Var,
    /// Forward value of the sample `[n, units]`.
    pub sample: Tensor,
    /// Per-row `log p(z)` for score-function estimators.
    pub log_prob: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
enum Rule {
    /// Hard sample, `log p` recorded when `score` is set.
    Hard { score: bool },
    StraightThrough { slope: f64 },
    Relaxed { tau: f64 },
    StRelaxed { tau: f64 },
}

enum Mode<'a> {
    Sample { rule: Rule, rng: &'a mut StreamRng },
    /// Taylor pass: layers before `pivot` replay their samples, the pivot
    /// is a parameter leaf at the expansion point, later layers take their
    /// differentiable mean.
    Taylor {
        pivot: usize,
        samples: &'a [Tensor],
        expansion: Expansion,
        leaf: Option<Var>,
    },
}

/// Sampler handed to a model's forward pass; one call to [`Sites::sample`]
/// per stochastic layer, in a fixed order.
pub struct Sites<'a> {
    mode: Mode<'a>,
    records: Vec<SiteRecord>,
}

impl<'a> Sites<'a> {
    /// Samples drawn as the estimator requires.
    pub fn for_estimator(settings: &EstimatorSettings, rng: &'a mut StreamRng) -> Self {
        let rule = match settings.kind {
            EstimatorKind::Sf | EstimatorKind::Nvil | EstimatorKind::Darn | EstimatorKind::Muprop => {
                Rule::Hard { score: true }
            }
            EstimatorKind::St => Rule::StraightThrough { slope: 1.0 },
            EstimatorKind::StSlope => Rule::StraightThrough { slope: settings.slope },
            EstimatorKind::Gs => Rule::Relaxed { tau: settings.tau },
            EstimatorKind::StGs => Rule::StRelaxed { tau: settings.tau },
        };
        Sites {
            mode: Mode::Sample { rule, rng },
            records: Vec::new(),
        }
    }

    /// Hard (discrete) samples with no gradient: evaluation.
    pub fn discrete(rng: &'a mut StreamRng) -> Self {
        Sites {
            mode: Mode::Sample {
                rule: Rule::Hard { score: false },
                rng,
            },
            records: Vec::new(),
        }
    }

    /// Relaxed Gumbel-Softmax samples at temperature `tau`.
    pub fn relaxed(tau: f64, rng: &'a mut StreamRng) -> Self {
        Sites {
            mode: Mode::Sample {
                rule: Rule::Relaxed { tau },
                rng,
            },
            records: Vec::new(),
        }
    }

    fn taylor(pivot: usize, samples: &'a [Tensor], expansion: Expansion) -> Self {
        Sites {
            mode: Mode::Taylor {
                pivot,
                samples,
                expansion,
                leaf: None,
            },
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[SiteRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SiteRecord> {
        self.records
    }

    /// Random stream for auxiliary noise the model needs; `None` during
    /// Taylor passes, which are deterministic.
    pub fn rng(&mut self) -> Option<&mut StreamRng> {
        match &mut self.mode {
            Mode::Sample { rng, .. } => Some(rng),
            Mode::Taylor { .. } => None,
        }
    }

    /// Sample a stochastic layer with logits `[n, units]`.
    pub fn sample(&mut self, g: &mut Graph, logits: Var, kind: LatentKind) -> Result<Var> {
        let [n, u] = *g.shape(logits) else {
            return Err(Error::shape("site", format!("logits must be [n, units], got {:?}", g.shape(logits))));
        };
        kind.check_units(u)?;
        let index = self.records.len();
        let (z, log_prob) = match &mut self.mode {
            Mode::Sample { rule, rng } => {
                let rule = *rule;
                let noise = kind.draw_noise(n, u, rng);
                sample_with_rule(g, logits, kind, rule, noise)?
            }
            Mode::Taylor {
                pivot,
                samples,
                expansion,
                leaf,
            } => {
                let z = if index < *pivot {
                    let s = samples.get(index).ok_or_else(|| {
                        Error::InvalidArgument("Taylor pass visited more layers than were sampled".into())
                    })?;
                    if s.shape() != [n, u] {
                        return Err(Error::shape("site", "replayed sample has a different shape"));
                    }
                    g.constant(s.clone())
                } else if index == *pivot {
                    let v = g.param(expansion.point(kind, g.value(logits)));
                    *leaf = Some(v);
                    v
                } else {
                    kind.mean_node(g, logits)?
                };
                (z, None)
            }
        };
        self.records.push(SiteRecord {
            kind,
            logits,
            sample: g.value(z).clone(),
            log_prob,
        });
        Ok(z)
    }
}

fn sample_with_rule(
    g: &mut Graph,
    logits: Var,
    kind: LatentKind,
    rule: Rule,
    noise: Tensor,
) -> Result<(Var, Option<Var>)> {
    let [n, u] = *g.shape(logits) else { unreachable!("checked by caller") };
    match rule {
        Rule::Hard { score } => {
            let hard = kind.hard_from_noise(g.value(logits), &noise)?;
            let h = g.constant(hard);
            let dist = match kind {
                LatentKind::Bernoulli => DistTag::Bernoulli,
                LatentKind::Categorical { .. } => DistTag::Categorical,
            };
            let z = g.stochastic(h, dist, noise, false);
            let lp = if score { Some(kind.log_prob_node(g, logits, z)?) } else { None };
            Ok((z, lp))
        }
        Rule::StraightThrough { slope } => {
            let hard = kind.hard_from_noise(g.value(logits), &noise)?;
            let scaled = if slope == 1.0 { logits } else { g.scale(logits, slope)? };
            let soft = kind.mean_node(g, scaled)?;
            Ok((g.straight_through(hard, soft)?, None))
        }
        Rule::Relaxed { tau } | Rule::StRelaxed { tau } => {
            let st = matches!(rule, Rule::StRelaxed { .. });
            let z = match kind {
                LatentKind::Bernoulli if st => st_relaxed_bernoulli_node(g, logits, tau, noise)?,
                LatentKind::Bernoulli => relaxed_bernoulli_node(g, logits, tau, noise)?,
                LatentKind::Categorical { k } => {
                    let grouped = g.reshape(logits, &[n, u / k, k])?;
                    let y = if st {
                        st_gumbel_softmax_node(g, grouped, tau, noise)?
                    } else {
                        gumbel_softmax_node(g, grouped, tau, noise)?
                    };
                    g.reshape(y, &[n, u])?
                }
            };
            Ok((z, None))
        }
    }
}

/// Result of one estimator step on a model.
#[derive(Debug, Clone)]
pub struct SiteGradient {
    /// Per-row cost of the sampled forward pass.
    pub cost: Vec<f64>,
    /// Gradient of the expected mean cost for each parameter.
    pub grads: Vec<Tensor>,
    pub state: BaselineState,
    pub diagnostics: super::Diagnostics,
}

impl SiteGradient {
    pub fn mean_cost(&self) -> f64 {
        self.cost.iter().sum::<f64>() / self.cost.len() as f64
    }
}

/// Gradient of `E[mean_rows f]` for a model whose forward pass builds
/// per-row costs `[n]` from parameter leaves and [`Sites`] samples.
///
/// The forward pass must treat rows independently and draw all its
/// randomness through `Sites`. Taylor baselines re-run it once per
/// stochastic layer with parameters frozen.
pub fn stochastic_gradient<F>(
    forward: F,
    params: &[Tensor],
    settings: &EstimatorSettings,
    state: &BaselineState,
    conditioning: Option<&Tensor>,
    rng: &mut StreamRng,
) -> Result<SiteGradient>
where
    F: Fn(&mut Graph, &[Var], &mut Sites<'_>) -> Result<Var>,
{
    settings.validate()?;
    let mut g = Graph::new();
    let pv: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let mut sites = Sites::for_estimator(settings, rng);
    let cost = forward(&mut g, &pv, &mut sites)?;
    let records = sites.into_records();
    let f = match g.shape(cost) {
        [_] => g.value(cost).data().to_vec(),
        s => return Err(Error::shape("stochastic_gradient", format!("cost must be [n], got {s:?}"))),
    };
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost".into()));
    }
    let n = f.len();
    let mean_cost = g.mean(cost, 0)?;
    let mut diagnostics = super::Diagnostics {
        raw_signal: f.clone(),
        ..Default::default()
    };

    let loss = if settings.kind.is_score_function() {
        let norm = if settings.variance_normalization { state.normalizer() } else { 1.0 };
        let mut common = vec![0.0; n];
        if settings.centered || settings.kind == EstimatorKind::Nvil {
            common.iter_mut().for_each(|b| *b = state.mean);
        }
        if settings.kind == EstimatorKind::Nvil {
            let b = state.input_baseline(conditioning, n)?;
            common.iter_mut().zip(b).for_each(|(c, v)| *c += v);
        }
        let samples: Vec<Tensor> = records.iter().map(|r| r.sample.clone()).collect();
        let mut total = mean_cost;
        for (s, rec) in records.iter().enumerate() {
            let lp = rec.log_prob.expect("score rule records log p");
            let (baseline, slope) = match settings.kind.expansion() {
                Some(exp) => {
                    let t = taylor_pass(&forward, params, &samples, s, exp)?;
                    let mut b = t.value;
                    for (row, bv) in b.iter_mut().enumerate() {
                        let zr = rec.sample.row(row);
                        let pr = t.point.row(row);
                        let fr = t.slope.row(row);
                        *bv += (0..zr.len()).map(|j| fr[j] * (zr[j] - pr[j])).sum::<f64>();
                    }
                    (b, Some(t.slope))
                }
                None => (common.clone(), None),
            };
            let signal: Vec<f64> = f.iter().zip(&baseline).map(|(fv, b)| (fv - b) / norm).collect();
            let sig = g.constant(Tensor::vector(signal.clone()));
            let weighted = g.mul(sig, lp)?;
            let score = g.sum_all(weighted)?;
            let score = g.scale(score, 1.0 / n as f64)?;
            total = g.add(total, score)?;
            if settings.kind == EstimatorKind::Muprop {
                let fp = slope.expect("muprop has a slope").map(|v| v / norm);
                let fpv = g.constant(fp);
                let mean = rec.kind.mean_node(&mut g, rec.logits)?;
                let prod = g.mul(fpv, mean)?;
                let mu_b = g.sum_all(prod)?;
                let mu_b = g.scale(mu_b, 1.0 / n as f64)?;
                total = g.add(total, mu_b)?;
            }
            if s == 0 {
                diagnostics.baseline = baseline;
                diagnostics.normalized_signal = signal;
            }
        }
        total
    } else {
        mean_cost
    };

    let grads = g.backward(loss)?;
    let out: Vec<Tensor> = pv
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    if out.iter().any(|t| !t.all_finite()) {
        return Err(Error::NonFinite(format!("{} gradient", settings.kind)));
    }
    let next = if settings.kind.is_score_function() {
        state.observe(&f, if state.net.is_some() { conditioning } else { None })?
    } else {
        state.clone()
    };
    Ok(SiteGradient {
        cost: f,
        grads: out,
        state: next,
        diagnostics,
    })
}

struct TaylorTerms {
    value: Vec<f64>,
    slope: Tensor,
    point: Tensor,
}

/// `f` and `∂f/∂z_s` at the expansion point of layer `s`, with earlier
/// layers fixed to their samples and later layers at their means.
fn taylor_pass<F>(forward: &F, params: &[Tensor], samples: &[Tensor], pivot: usize, exp: Expansion) -> Result<TaylorTerms>
where
    F: Fn(&mut Graph, &[Var], &mut Sites<'_>) -> Result<Var>,
{
    let mut h = Graph::new();
    let pv: Vec<Var> = params.iter().map(|p| h.constant(p.clone())).collect();
    let mut sites = Sites::taylor(pivot, samples, exp);
    let cost = forward(&mut h, &pv, &mut sites)?;
    let leaf = match sites.mode {
        Mode::Taylor { leaf: Some(v), .. } => v,
        _ => return Err(Error::InvalidArgument("Taylor pass did not reach its layer".into())),
    };
    let value = h.value(cost).data().to_vec();
    let point = h.value(leaf).clone();
    let total = h.sum_all(cost)?;
    let grads = h.backward(total)?;
    let slope = grads.get_or_zeros(leaf, point.shape());
    Ok(TaylorTerms { value, slope, point })
}
