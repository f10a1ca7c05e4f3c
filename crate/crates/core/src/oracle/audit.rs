use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{pairwise_sum, EnumerationTestbed};
use crate::error::{Error, Result};
use crate::estimators::{estimate_gradient, BaselineNet, BaselineState, EstimatorInput, EstimatorKind, EstimatorSettings};
use crate::rng::{stream_rng, streams};

/// Per-coordinate critical `|z|` so that the family-wise false-alarm rate
/// across `coords` coordinates equals that of a single `|z| > 3` test.
pub fn bonferroni_critical(coords: usize) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let alpha = 2.0 * (1.0 - normal.cdf(3.0));
    normal.inverse_cdf(1.0 - alpha / (2.0 * coords.max(1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub trials: usize,
    pub seed: u64,
    /// Samples averaged into each trial's estimate.
    pub samples_per_trial: usize,
}

impl AuditOptions {
    pub fn new(trials: usize, seed: u64) -> Self {
        AuditOptions {
            trials,
            seed,
            samples_per_trial: 1,
        }
    }
}

/// Bias and variance of an estimator against the exact gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorAudit {
    pub estimator: String,
    pub testbed: String,
    pub n: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub exact: Vec<f64>,
    /// `(mean - exact) / se`; zero where the bias is at rounding level.
    pub z: Vec<f64>,
    pub var: Vec<f64>,
    pub z_critical: f64,
}

impl EstimatorAudit {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().map(|z| z.abs()).fold(0.0, f64::max)
    }

    /// No coordinate exceeds the Bonferroni-corrected threshold.
    pub fn unbiased(&self) -> bool {
        self.max_abs_z() < self.z_critical
    }

    pub fn biased(&self) -> bool {
        self.max_abs_z() > self.z_critical
    }

    pub fn total_variance(&self) -> f64 {
        self.var.iter().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Run `options.trials` independent estimates on `testbed` and compare
/// their mean with the exact gradient.
///
/// Estimator noise comes from one stream of `options.seed`, drawn in the
/// same order by every estimator, so audits with equal seeds are paired.
/// Baseline state is threaded through the trials as in training.
pub fn audit_estimator(
    settings: &EstimatorSettings,
    testbed: &EnumerationTestbed,
    options: &AuditOptions,
) -> Result<EstimatorAudit> {
    if options.trials < 1000 {
        return Err(Error::InvalidArgument(format!(
            "audits need at least 1000 trials, got {}",
            options.trials
        )));
    }
    let exact = testbed.exact_expected_gradient()?;
    let logits = testbed.logits_tensor();
    let input = EstimatorInput {
        logits: &logits,
        kind: testbed.kind,
        cost: &testbed.cost,
        samples: options.samples_per_trial,
    };
    let mut rng = stream_rng(options.seed, 0, streams::NOISE);
    let mut state = BaselineState::new(0.9);
    if settings.kind == EstimatorKind::Nvil {
        let mut init = stream_rng(options.seed, 0, streams::BASELINE);
        state = state.with_net(BaselineNet::new(1, 8, settings.baseline_lr, &mut init));
    }
    let u = testbed.units();
    let mut columns = vec![Vec::with_capacity(options.trials); u];
    for _ in 0..options.trials {
        let (out, next) = estimate_gradient(settings, &input, &state, &mut rng)?;
        state = next;
        for (col, v) in columns.iter_mut().zip(out.gradient.data()) {
            col.push(*v);
        }
    }
    let n = options.trials as f64;
    let mut mean = Vec::with_capacity(u);
    let mut var = Vec::with_capacity(u);
    for col in &columns {
        let m = pairwise_sum(col) / n;
        let sq: Vec<f64> = col.iter().map(|v| (v - m).powi(2)).collect();
        mean.push(m);
        var.push(pairwise_sum(&sq) / (n - 1.0));
    }
    let se: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    let z = mean
        .iter()
        .zip(exact.data())
        .zip(&se)
        .map(|((m, e), s)| {
            let bias = m - e;
            // below the rounding floor a bias is not evidence of anything
            if bias.abs() <= 1e-12 * (1.0 + e.abs()) {
                0.0
            } else if *s > 0.0 {
                bias / s
            } else {
                bias.signum() * f64::INFINITY
            }
        })
        .collect();
    Ok(EstimatorAudit {
        estimator: settings.kind.name().to_string(),
        testbed: testbed.id.clone(),
        n: options.trials,
        mean,
        se,
        exact: exact.into_data(),
        z,
        var,
        z_critical: bonferroni_critical(u),
    })
}
