//! Gradient estimators for `E_{z ~ p_θ}[f(z)]` with discrete `z`.
//!
//! Every estimator runs through one engine, [`stochastic_gradient`]: a model
//! forward pass asks [`Sites`] for a sample at each stochastic layer, and
//! the estimator decides how that sample is drawn and which surrogate loss
//! is differentiated.
//!
//! * Score-function family (`sf`, `nvil`, `darn`, `muprop`): hard samples,
//!   surrogate `mean f + mean(stop(signal) · log p(z))`.
//! * Straight-through family (`st`, `st_slope`): hard forward value,
//!   backward through the (slope-scaled) mean.
//! * Relaxations (`gs`, `st_gs`): Gumbel-Softmax samples, pathwise gradient.
//!
//! For categorical latents, `darn` and `muprop` expand around `z̄ = π`;
//! Bernoulli `darn` expands around `1/2`. The categorical straight-through
//! backward is applied to `softmax(logits)`, and the categorical `st_slope`
//! uses `softmax(s · logits)`: both are reconstructions, since the
//! straight-through estimators are only defined for Bernoulli units.

mod baseline;
mod sites;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use baseline::{BaselineNet, BaselineState};
pub use sites::{stochastic_gradient, Expansion, SiteGradient, SiteRecord, Sites};

use crate::distributions::{bernoulli_log_prob_node, categorical_log_prob_node, sample_gumbel, sample_logistic};
use crate::error::{Error, Result};
use crate::graph::{argmax, Graph, Tensor, Var};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Sf,
    Nvil,
    Darn,
    Muprop,
    St,
    StSlope,
    Gs,
    StGs,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Sf,
        EstimatorKind::Nvil,
        EstimatorKind::Darn,
        EstimatorKind::Muprop,
        EstimatorKind::St,
        EstimatorKind::StSlope,
        EstimatorKind::Gs,
        EstimatorKind::StGs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Sf => "sf",
            EstimatorKind::Nvil => "nvil",
            EstimatorKind::Darn => "darn",
            EstimatorKind::Muprop => "muprop",
            EstimatorKind::St => "st",
            EstimatorKind::StSlope => "st_slope",
            EstimatorKind::Gs => "gs",
            EstimatorKind::StGs => "st_gs",
        }
    }

    pub fn is_score_function(self) -> bool {
        matches!(
            self,
            EstimatorKind::Sf | EstimatorKind::Nvil | EstimatorKind::Darn | EstimatorKind::Muprop
        )
    }

    pub fn uses_temperature(self) -> bool {
        matches!(self, EstimatorKind::Gs | EstimatorKind::StGs)
    }

    /// `darn` and `muprop` build a first-order Taylor baseline.
    pub fn expansion(self) -> Option<Expansion> {
        match self {
            EstimatorKind::Darn => Some(Expansion::Darn),
            EstimatorKind::Muprop => Some(Expansion::Mean),
            _ => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown estimator `{s}` (expected one of sf|nvil|darn|muprop|st|st_slope|gs|st_gs)"
                ))
            })
    }
}

/// Slope for the slope-annealed straight-through estimator:
/// `s(t) = min(s_max, 1 + rate · t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeSchedule {
    pub rate: f64,
    #[serde(default = "default_slope_max")]
    pub max: f64,
}

fn default_slope_max() -> f64 {
    5.0
}

impl SlopeSchedule {
    pub fn slope(&self, step: u64) -> f64 {
        (1.0 + self.rate * step as f64).min(self.max)
    }
}

/// Per-estimator knobs. `tau` is read by `gs`/`st_gs`, `slope` by `st_slope`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub kind: EstimatorKind,
    pub tau: f64,
    pub slope: f64,
    /// Divide the score term by `max(1, σ_f)`.
    pub variance_normalization: bool,
    /// Subtract the moving average `f̄` (always on for `nvil`).
    pub centered: bool,
    /// Learning rate of the NVIL input-baseline network.
    pub baseline_lr: f64,
}

impl EstimatorSettings {
    /// Variance normalization on for the score-function family, no
    /// moving-average centering for plain `sf`.
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorSettings {
            kind,
            tau: 1.0,
            slope: 1.0,
            variance_normalization: kind.is_score_function(),
            centered: kind == EstimatorKind::Nvil,
            baseline_lr: 1e-3,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.variance_normalization = on;
        self
    }

    pub fn with_centering(mut self, on: bool) -> Self {
        self.centered = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.uses_temperature() && !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {}", self.tau)));
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(Error::InvalidArgument(format!("slope must be > 0, got {}", self.slope)));
        }
        Ok(())
    }
}

/// Latent variable family of a stochastic layer. A categorical layer with
/// `units = groups · k` holds `groups` independent `k`-way variables laid
/// out contiguously.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LatentKind {
    Bernoulli,
    Categorical { k: usize },
}

impl LatentKind {
    pub(crate) fn check_units(&self, units: usize) -> Result<()> {
        match *self {
            LatentKind::Bernoulli if units > 0 => Ok(()),
            LatentKind::Categorical { k } if k >= 2 && units > 0 && units.is_multiple_of(k) => Ok(()),
            _ => Err(Error::InvalidArgument(format!("{units} units do not fit latent kind {self:?}"))),
        }
    }

    fn rows_units(g: &Graph, logits: Var) -> Result<(usize, usize)> {
        match *g.shape(logits) {
            [n, u] => Ok((n, u)),
            ref s => Err(Error::shape("site", format!("logits must be [n, units], got {s:?}"))),
        }
    }

    /// `[n, G·k] -> [n, G, k]`.
    fn grouped(&self, g: &mut Graph, v: Var) -> Result<Var> {
        let (n, u) = LatentKind::rows_units(g, v)?;
        match *self {
            LatentKind::Bernoulli => Ok(v),
            LatentKind::Categorical { k } => g.reshape(v, &[n, u / k, k]),
        }
    }

    fn ungrouped(&self, g: &mut Graph, v: Var, n: usize, u: usize) -> Result<Var> {
        match *self {
            LatentKind::Bernoulli => Ok(v),
            LatentKind::Categorical { .. } => g.reshape(v, &[n, u]),
        }
    }

    /// Differentiable mean `E[z]`: `sigmoid` or per-group `softmax`.
    pub fn mean_node(&self, g: &mut Graph, logits: Var) -> Result<Var> {
        let (n, u) = LatentKind::rows_units(g, logits)?;
        self.check_units(u)?;
        match *self {
            LatentKind::Bernoulli => g.sigmoid(logits),
            LatentKind::Categorical { .. } => {
                let grouped = self.grouped(g, logits)?;
                let p = g.softmax(grouped, 2)?;
                self.ungrouped(g, p, n, u)
            }
        }
    }

    /// Per-row `log p(z)`, summed over units, as an `[n]` node.
    pub fn log_prob_node(&self, g: &mut Graph, logits: Var, z: Var) -> Result<Var> {
        let (n, u) = LatentKind::rows_units(g, logits)?;
        self.check_units(u)?;
        match *self {
            LatentKind::Bernoulli => {
                let lp = bernoulli_log_prob_node(g, logits, z)?;
                g.sum(lp, 1)
            }
            LatentKind::Categorical { k } => {
                let flat_l = g.reshape(logits, &[n * (u / k), k])?;
                let flat_z = g.reshape(z, &[n * (u / k), k])?;
                let lp = categorical_log_prob_node(g, flat_l, flat_z)?;
                let per_row = g.reshape(lp, &[n, u / k])?;
                g.sum(per_row, 1)
            }
        }
    }

    /// Noise for one draw: logistic for Bernoulli, Gumbel for categorical,
    /// shaped like the grouped logits.
    pub fn draw_noise(&self, n: usize, units: usize, rng: &mut StreamRng) -> Tensor {
        match *self {
            LatentKind::Bernoulli => sample_logistic(&[n, units], rng),
            LatentKind::Categorical { k } => sample_gumbel(&[n, units / k, k], rng),
        }
    }

    /// Hard sample `[n, units]` from logits and noise: `1[a + L > 0]`, or the
    /// per-group Gumbel-Max one-hot.
    pub fn hard_from_noise(&self, logits: &Tensor, noise: &Tensor) -> Result<Tensor> {
        let [n, u] = *logits.shape() else {
            return Err(Error::shape("site", format!("logits must be [n, units], got {:?}", logits.shape())));
        };
        self.check_units(u)?;
        if noise.len() != logits.len() {
            return Err(Error::shape("site", format!("{} noise values for {} logits", noise.len(), logits.len())));
        }
        match *self {
            LatentKind::Bernoulli => {
                let data = logits
                    .data()
                    .iter()
                    .zip(noise.data())
                    .map(|(a, l)| if a + l > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                Tensor::new(vec![n, u], data)
            }
            LatentKind::Categorical { k } => {
                let mut out = vec![0.0; n * u];
                let perturbed: Vec<f64> = logits.data().iter().zip(noise.data()).map(|(a, g)| a + g).collect();
                for (group, chunk) in perturbed.chunks(k).enumerate() {
                    out[group * k + argmax(chunk)] = 1.0;
                }
                Tensor::new(vec![n, u], out)
            }
        }
    }

    /// Plain mean `E[z]` of the given logits.
    pub fn mean_value(&self, logits: &Tensor) -> Tensor {
        match *self {
            LatentKind::Bernoulli => logits.map(crate::graph::sigmoid),
            LatentKind::Categorical { k } => {
                let mut out = logits.data().to_vec();
                for chunk in out.chunks_mut(k) {
                    let m = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in chunk.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    for v in chunk.iter_mut() {
                        *v /= s;
                    }
                }
                Tensor::new(logits.shape().to_vec(), out).expect("same length")
            }
        }
    }
}

/// A cost `f(z)` that can be built into a graph. Takes samples `[n, units]`
/// and returns per-row costs `[n]`.
pub trait CostFunction {
    fn build(&self, g: &mut Graph, z: Var) -> Result<Var>;
}

impl<F> CostFunction for F
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    fn build(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self(g, z)
    }
}

/// Single stochastic layer with directly parameterized logits.
pub struct EstimatorInput<'a> {
    /// Logits `[units]`.
    pub logits: &'a Tensor,
    pub kind: LatentKind,
    pub cost: &'a dyn CostFunction,
    /// Number of samples `m` averaged into one estimate.
    pub samples: usize,
}

/// Learning signals of one estimate, one entry per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub raw_signal: Vec<f64>,
    pub baseline: Vec<f64>,
    pub normalized_signal: Vec<f64>,
    /// Set for categorical straight-through estimators, which are
    /// reconstructions rather than published definitions.
    pub reconstructed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub estimator: EstimatorKind,
    /// Gradient with respect to the logits, same shape.
    pub gradient: Tensor,
    pub samples: usize,
    pub baseline_version: u64,
    pub diagnostics: Diagnostics,
}

/// `[1, u] -> [m, u]` by a matmul with a column of ones.
pub fn tile_rows(g: &mut Graph, row: Var, m: usize) -> Result<Var> {
    if m == 1 {
        return Ok(row);
    }
    let ones = g.constant(Tensor::full(&[m, 1], 1.0));
    g.matmul(ones, row)
}

/// Estimate `∇_θ E[f(z)]` for logits `θ` with the configured estimator.
/// Returns the estimate and the updated baseline state.
pub fn estimate_gradient(
    settings: &EstimatorSettings,
    input: &EstimatorInput<'_>,
    state: &BaselineState,
    rng: &mut StreamRng,
) -> Result<(EstimatorOutput, BaselineState)> {
    if input.samples == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    if input.logits.rank() != 1 {
        return Err(Error::shape("estimate_gradient", "logits must be a vector"));
    }
    let u = input.logits.len();
    input.kind.check_units(u)?;
    let m = input.samples;
    let params = [input.logits.reshape(&[1, u])?];
    let conditioning = Tensor::full(&[m, 1], 1.0);
    let kind = input.kind;
    let cost = input.cost;
    let out = stochastic_gradient(
        |g: &mut Graph, p: &[Var], sites: &mut Sites<'_>| {
            let logits = tile_rows(g, p[0], m)?;
            let z = sites.sample(g, logits, kind)?;
            cost.build(g, z)
        },
        &params,
        settings,
        state,
        Some(&conditioning),
        rng,
    )?;
    let gradient = out.grads[0].reshape(&[u])?;
    if !gradient.all_finite() {
        return Err(Error::NonFinite(format!("{} gradient", settings.kind)));
    }
    let mut diagnostics = out.diagnostics;
    diagnostics.reconstructed = matches!(kind, LatentKind::Categorical { .. })
        && matches!(settings.kind, EstimatorKind::St | EstimatorKind::StSlope);
    Ok((
        EstimatorOutput {
            estimator: settings.kind,
            gradient,
            samples: m,
            baseline_version: state.version,
            diagnostics,
        },
        out.state,
    ))
}

fn with_kind(kind: EstimatorKind, input: &EstimatorInput<'_>, state: &BaselineState, rng: &mut StreamRng, f: impl FnOnce(EstimatorSettings) -> EstimatorSettings) -> Result<(EstimatorOutput, BaselineState)> {
    let settings = f(EstimatorSettings::new(kind));
    settings.validate()?;
    estimate_gradient(&settings, input, state, rng)
}

/// Score function. With `Some(state)` the moving average is subtracted.
pub fn sf_gradient(
    input: &EstimatorInput<'_>,
    baseline: Option<&BaselineState>,
    rng: &mut StreamRng,
) -> Result<(EstimatorOutput, BaselineState)> {
    let fresh = BaselineState::new(0.9);
    let state = baseline.unwrap_or(&fresh);
    with_kind(EstimatorKind::Sf, input, state, rng, |s| s.with_centering(baseline.is_some()))
}

pub fn nvil_gradient(
    input: &EstimatorInput<'_>,
    baseline: &BaselineState,
    rng: &mut StreamRng,
) -> Result<(EstimatorOutput, BaselineState)> {
    with_kind(EstimatorKind::Nvil, input, baseline, rng, |s| s)
}

pub fn darn_gradient(input: &EstimatorInput<'_>, rng: &mut StreamRng) -> Result<EstimatorOutput> {
    with_kind(EstimatorKind::Darn, input, &BaselineState::new(0.9), rng, |s| s).map(|r| r.0)
}

pub fn muprop_gradient(input: &EstimatorInput<'_>, rng: &mut StreamRng) -> Result<EstimatorOutput> {
    with_kind(EstimatorKind::Muprop, input, &BaselineState::new(0.9), rng, |s| s).map(|r| r.0)
}

pub fn st_gradient(input: &EstimatorInput<'_>, rng: &mut StreamRng) -> Result<EstimatorOutput> {
    with_kind(EstimatorKind::St, input, &BaselineState::new(0.9), rng, |s| s).map(|r| r.0)
}

pub fn slope_annealed_st_gradient(
    input: &EstimatorInput<'_>,
    slope: f64,
    rng: &mut StreamRng,
) -> Result<EstimatorOutput> {
    with_kind(EstimatorKind::StSlope, input, &BaselineState::new(0.9), rng, |s| s.with_slope(slope)).map(|r| r.0)
}

pub fn gs_gradient(input: &EstimatorInput<'_>, tau: f64, rng: &mut StreamRng) -> Result<EstimatorOutput> {
    with_kind(EstimatorKind::Gs, input, &BaselineState::new(0.9), rng, |s| s.with_tau(tau)).map(|r| r.0)
}

pub fn st_gs_gradient(input: &EstimatorInput<'_>, tau: f64, rng: &mut StreamRng) -> Result<EstimatorOutput> {
    with_kind(EstimatorKind::StGs, input, &BaselineState::new(0.9), rng, |s| s.with_tau(tau)).map(|r| r.0)
}
