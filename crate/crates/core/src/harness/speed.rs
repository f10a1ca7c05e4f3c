use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{prepare_data, ssvae_dims};
use crate::error::{Error, Result};
use crate::models::{calibrate_component_costs, predicted_speedup, ComponentCosts, InferenceMode, Ssvae, SsvaeNoise};
use crate::rng::{stream_rng, streams};

/// Full-scale reference ratios: about 2x at `k = 10` and 9.9x at `k = 100`.
pub const REFERENCE_SPEEDUPS: [(usize, f64); 2] = [(10, 2.0), (100, 9.9)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub k: usize,
    pub mode: InferenceMode,
    pub steps: usize,
    pub seconds: f64,
    pub steps_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub k: usize,
    /// Single-sample over marginalization steps per second.
    pub measured: f64,
    /// From timed component costs: `(D + k(I + G)) / (D + I + G)`.
    pub predicted: f64,
    pub costs: ComponentCosts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub rows: Vec<SpeedRow>,
    pub speedups: Vec<SpeedupRow>,
}

impl SpeedReport {
    pub fn speedup(&self, k: usize) -> Option<f64> {
        self.speedups.iter().find(|s| s.k == k).map(|s| s.measured)
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("k,mode,steps,seconds,steps_per_sec\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.k, r.mode.name(), r.steps, r.seconds, r.steps_per_sec);
        }
        s
    }

    pub fn speedups_csv(&self) -> String {
        let mut s = String::from("k,measured_speedup,predicted_speedup\n");
        for r in &self.speedups {
            let _ = writeln!(s, "{},{},{}", r.k, r.measured, r.predicted);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("speed.csv"), self.rows_csv())?;
        fs::write(dir.join("speedup.csv"), self.speedups_csv())?;
        fs::write(dir.join("speed.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Time the unlabeled step for each class count and inference mode.
///
/// Noise is drawn once per cell, outside the timed region. Each cell runs
/// `warmup_steps` untimed steps, then timed steps until both `min_steps`
/// and `min_seconds` are reached.
pub fn run_speed_benchmark(config: &ExperimentConfig, master_seed: u64) -> Result<SpeedReport> {
    config.validate()?;
    let data = prepare_data(config, master_seed)?;
    let n = config.batch_size.min(data.train.len());
    let xu = data.train.range(0, n).flatten();
    let sp = &config.speed;
    let mut rows = Vec::new();
    let mut speedups = Vec::new();
    for &k in &sp.classes {
        let mut dims = ssvae_dims(config, data.pixels());
        dims.classes = k;
        let mut init = stream_rng(master_seed, k as u64, streams::INIT);
        let model = Ssvae::new(dims, &mut init)?;
        let noise = SsvaeNoise::draw(&dims, 0, n, &mut stream_rng(master_seed, k as u64, streams::NOISE));
        let mut sps = Vec::new();
        for &mode in &sp.modes {
            for _ in 0..sp.warmup_steps {
                model.unlabeled_step(&xu, mode, 1.0, &noise)?;
            }
            let start = Instant::now();
            let mut steps = 0;
            while steps < sp.min_steps || start.elapsed().as_secs_f64() < sp.min_seconds {
                model.unlabeled_step(&xu, mode, 1.0, &noise)?;
                steps += 1;
            }
            let seconds = start.elapsed().as_secs_f64();
            let row = SpeedRow {
                k,
                mode,
                steps,
                seconds,
                steps_per_sec: steps as f64 / seconds,
            };
            sps.push((mode, row.steps_per_sec));
            rows.push(row);
        }
        let find = |m: InferenceMode| sps.iter().find(|(mm, _)| *mm == m).map(|(_, v)| *v);
        if let (Some(marg), Some(single)) = (find(InferenceMode::Marginalize), find(InferenceMode::Gumbel)) {
            let mut crng = stream_rng(master_seed, k as u64, streams::EVAL);
            let costs = calibrate_component_costs(&model, &xu, sp.min_steps, &mut crng)?;
            speedups.push(SpeedupRow {
                k,
                measured: single / marg,
                predicted: predicted_speedup(k, &costs),
                costs,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("speed benchmark has no cells".into()));
    }
    Ok(SpeedReport { rows, speedups })
}
