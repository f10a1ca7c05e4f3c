use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Binarization, DataSource, DownsampleRule};
use crate::distributions::AnnealSchedule;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, SlopeSchedule};
use crate::models::{InferenceMode, LatentSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sbn,
    Vae,
    Ssvae,
    Audit,
    Density,
    Speed,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sbn => "sbn",
            Task::Vae => "vae",
            Task::Ssvae => "ssvae",
            Task::Audit => "audit",
            Task::Density => "density",
            Task::Speed => "speed",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown task `{s}`")))
    }
}

pub const DEFAULT_LEARNING_RATES: [f64; 6] = [3e-5, 1e-5, 3e-4, 1e-4, 3e-3, 1e-3];
pub const DEFAULT_ANNEAL_RATES: [f64; 2] = [1e-5, 1e-4];
pub const DEFAULT_ANNEAL_INTERVALS: [u64; 2] = [500, 1000];
pub const DEFAULT_ALPHAS: [f64; 5] = [0.1, 0.2, 0.3, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsvaeSettings {
    pub modes: Vec<InferenceMode>,
    pub classes: usize,
    /// Labeled training examples, spread evenly over the classes.
    pub labeled: usize,
    /// Full-size widths; multiplied by the scale factor.
    pub style: usize,
    pub hidden: usize,
    pub anneal: AnnealSchedule,
}

impl Default for SsvaeSettings {
    fn default() -> Self {
        SsvaeSettings {
            modes: vec![InferenceMode::Marginalize, InferenceMode::Gumbel, InferenceMode::StGumbel],
            classes: 10,
            labeled: 100,
            style: 50,
            hidden: 500,
            anneal: AnnealSchedule {
                rate: 3e-5,
                floor: 0.5,
                update_every: 2000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedSettings {
    pub classes: Vec<usize>,
    pub modes: Vec<InferenceMode>,
    /// Untimed steps before each measurement.
    pub warmup_steps: usize,
    /// A cell is timed over at least this many steps and this many seconds.
    pub min_steps: usize,
    pub min_seconds: f64,
}

impl Default for SpeedSettings {
    fn default() -> Self {
        SpeedSettings {
            classes: vec![1, 2, 5, 10, 20, 50, 100],
            modes: vec![InferenceMode::Marginalize, InferenceMode::Gumbel],
            warmup_steps: 3,
            min_steps: 10,
            min_seconds: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySettings {
    /// Class probabilities; `k = probs.len()` must be 2 or 3.
    pub probs: Vec<f64>,
    pub taus: Vec<f64>,
    /// Grid intervals along each simplex edge.
    pub resolution: usize,
    pub samples: usize,
}

impl Default for DensitySettings {
    fn default() -> Self {
        DensitySettings {
            probs: vec![0.2, 0.3, 0.5],
            taus: vec![0.1, 0.5, 1.0, 10.0],
            resolution: 60,
            samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    pub trials: usize,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings { trials: 100_000 }
    }
}

/// Declarative description of an experiment. Every field except `task`
/// has a default, so `{"task": "sbn"}` is a complete desk-scale config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Full-size stochastic layer; the scale factor shrinks it.
    #[serde(default = "default_latent")]
    pub latent: LatentSpec,
    #[serde(default = "default_sbn_layers")]
    pub sbn_layers: usize,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<f64>,
    /// VAE temperature annealing grid, for `gs` and `st_gs`.
    #[serde(default = "default_anneal_rates")]
    pub anneal_rates: Vec<f64>,
    #[serde(default = "default_anneal_intervals")]
    pub anneal_intervals: Vec<u64>,
    #[serde(default = "default_floor")]
    pub anneal_floor: f64,
    /// Fixed temperature for the SBN task.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_slope")]
    pub slope: SlopeSchedule,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_m")]
    pub eval_m: usize,
    /// Size of the fixed validation and test subsets used for evaluation.
    #[serde(default = "default_eval_examples")]
    pub eval_examples: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Decay of the running mean and variance of the learning signal.
    #[serde(default = "default_decay")]
    pub baseline_decay: f64,
    #[serde(default = "default_nvil_hidden")]
    pub nvil_hidden: usize,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_downsample")]
    pub downsample: Option<DownsampleRule>,
    #[serde(default)]
    pub binarization: Binarization,
    /// Width multiplier applied to every full-size layer.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub ssvae: SsvaeSettings,
    #[serde(default)]
    pub speed: SpeedSettings,
    #[serde(default)]
    pub density: DensitySettings,
    #[serde(default)]
    pub audit: AuditSettings,
}

fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}
fn default_latent() -> LatentSpec {
    LatentSpec::Categorical { k: 10, groups: 20 }
}
fn default_sbn_layers() -> usize {
    2
}
fn default_learning_rates() -> Vec<f64> {
    DEFAULT_LEARNING_RATES.to_vec()
}
fn default_anneal_rates() -> Vec<f64> {
    DEFAULT_ANNEAL_RATES.to_vec()
}
fn default_anneal_intervals() -> Vec<u64> {
    DEFAULT_ANNEAL_INTERVALS.to_vec()
}
fn default_floor() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    1.0
}
fn default_slope() -> SlopeSchedule {
    SlopeSchedule { rate: 1e-4, max: 5.0 }
}
fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_steps() -> u64 {
    5000
}
fn default_batch() -> usize {
    100
}
fn default_eval_every() -> u64 {
    1000
}
fn default_eval_m() -> usize {
    1000
}
fn default_eval_examples() -> usize {
    100
}
fn default_momentum() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    0.9
}
fn default_nvil_hidden() -> usize {
    16
}
fn default_downsample() -> Option<DownsampleRule> {
    Some(DownsampleRule::default())
}
fn default_scale() -> f64 {
    0.1
}

fn non_empty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::Config(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

fn all_positive(v: &[f64], what: &str) -> Result<()> {
    non_empty(v, what)?;
    if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::Config(format!("{what} must be positive and finite")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Desk-scale defaults for `task`.
    pub fn new(task: Task) -> Self {
        serde_json::from_value(serde_json::json!({ "task": task.name() })).expect("defaults deserialize")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        ExperimentConfig::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        non_empty(&self.estimators, "estimators")?;
        non_empty(&self.seeds, "seeds")?;
        all_positive(&self.learning_rates, "learning_rates")?;
        all_positive(&self.anneal_rates, "anneal_rates")?;
        all_positive(&self.alphas, "alphas")?;
        non_empty(&self.anneal_intervals, "anneal_intervals")?;
        if self.anneal_intervals.contains(&0) {
            return Err(Error::Config("anneal_intervals must be positive".into()));
        }
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 || self.eval_m == 0 {
            return Err(Error::Config("steps, batch_size, eval_every and eval_m must be > 0".into()));
        }
        if self.eval_examples == 0 {
            return Err(Error::Config("eval_examples must be > 0".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be > 0, got {}", self.scale)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("momentum and baseline_decay must lie in [0, 1)".into()));
        }
        if !(self.tau > 0.0) || !(self.anneal_floor > 0.0) {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        if self.sbn_layers == 0 {
            return Err(Error::Config("sbn_layers must be >= 1".into()));
        }
        self.latent.validate()?;
        self.ssvae.anneal.validate().map_err(|e| Error::Config(e.to_string()))?;
        non_empty(&self.ssvae.modes, "ssvae.modes")?;
        if self.ssvae.classes < 2 || self.ssvae.labeled < self.ssvae.classes {
            return Err(Error::Config("ssvae needs >= 2 classes and a labeled example per class".into()));
        }
        non_empty(&self.speed.classes, "speed.classes")?;
        non_empty(&self.speed.modes, "speed.modes")?;
        if self.speed.classes.contains(&0) {
            return Err(Error::Config("speed.classes must be positive".into()));
        }
        all_positive(&self.density.taus, "density.taus")?;
        let k = self.density.probs.len();
        if !(2..=3).contains(&k) || self.density.probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("density.probs needs 2 or 3 positive entries".into()));
        }
        if self.density.resolution < 3 || self.density.samples == 0 {
            return Err(Error::Config("density.resolution >= 3 and density.samples >= 1".into()));
        }
        if self.audit.trials < 1000 {
            return Err(Error::Config("audit.trials must be >= 1000".into()));
        }
        Ok(())
    }

    /// Scale a full-size width, keeping at least one unit.
    pub fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.scale).round() as usize).max(1)
    }

    pub fn scaled_latent(&self) -> LatentSpec {
        self.latent.scaled(self.scale)
    }
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form of `value`.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let text = serde_json::to_string(&v)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
