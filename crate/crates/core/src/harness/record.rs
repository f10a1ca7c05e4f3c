use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::AnnealSchedule;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::models::InferenceMode;

pub const METRICS_HEADER: &str = "step,split,metric,value";
pub const TIMINGS_HEADER: &str = "step,wall_clock_s,steps_per_sec";

/// One hyperparameter setting of a grid; everything a single training run
/// needs besides the shared config and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub estimator: Option<EstimatorKind>,
    pub mode: Option<InferenceMode>,
    pub lr: f64,
    pub anneal: Option<AnnealSchedule>,
    pub alpha: Option<f64>,
}

impl CellSpec {
    /// Grouping key for selection: cells differing only in tuned
    /// hyperparameters share it.
    pub fn method(&self) -> String {
        match (self.estimator, self.mode) {
            (Some(e), _) => e.name().to_string(),
            (None, Some(m)) => m.name().to_string(),
            (None, None) => "model".to_string(),
        }
    }

    /// Short file-system-safe identifier.
    pub fn id(&self, seed: u64) -> String {
        let mut s = format!("{}_lr{:e}", self.method(), self.lr);
        if let Some(a) = &self.anneal {
            let _ = write!(s, "_r{:e}_n{}", a.rate, a.update_every);
        }
        if let Some(a) = self.alpha {
            let _ = write!(s, "_a{a}");
        }
        let _ = write!(s, "_s{seed}");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub step: u64,
    pub wall_clock_s: f64,
    pub steps_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed { step: u64, error: String },
}

/// Everything one cell produced. Metrics are a pure function of the
/// config and master seed; wall-clock data lives apart in `timings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub cell: CellSpec,
    pub cell_id: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seed: u64,
    pub binarization: String,
    pub status: CellStatus,
    pub metrics: Vec<MetricRow>,
    #[serde(skip)]
    pub timings: Vec<TimingRow>,
}

impl RunRecord {
    /// Append a metric, rejecting a step that does not advance its series.
    pub fn push_metric(&mut self, step: u64, split: &str, metric: &str, value: f64) -> Result<()> {
        if let Some(last) = self.metrics.iter().rev().find(|r| r.split == split && r.metric == metric) {
            if step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "{split}/{metric}: step {step} does not follow {}",
                    last.step
                )));
            }
        }
        self.metrics.push(MetricRow {
            step,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    pub fn final_metric(&self, split: &str, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .rev()
            .find(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn series(&self, split: &str, metric: &str) -> Vec<(u64, f64)> {
        self.metrics
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| (r.step, r.value))
            .collect()
    }

    pub fn completed(&self) -> bool {
        self.status == CellStatus::Completed
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.metrics {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.split, r.metric, r.value);
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from(TIMINGS_HEADER);
        s.push('\n');
        for t in &self.timings {
            let _ = writeln!(s, "{},{},{}", t.step, t.wall_clock_s, t.steps_per_sec);
        }
        s
    }

    /// Write `metrics.csv`, `timings.csv` and `record.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        fs::write(dir.join("timings.csv"), self.timings_csv())?;
        fs::write(dir.join("record.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics file lacks the expected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("bad metrics row `{l}`")));
            }
            let bad = |_| Error::Format(format!("bad metrics row `{l}`"));
            Ok(MetricRow {
                step: f[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                split: f[1].to_string(),
                metric: f[2].to_string(),
                value: f[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            })
        })
        .collect()
}

/// Which way a selection metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Minimize,
    Maximize,
}

/// The validation-best cell of one `(method, seed)` group and its test
/// score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: String,
    pub seed: u64,
    pub cell_id: String,
    pub cell: CellSpec,
    pub metric: String,
    pub valid: f64,
    pub test: f64,
    pub failed_cells: usize,
}

/// Pick, per `(method, seed)`, the completed cell with the best final
/// validation `metric` and report that cell's final test value. Test
/// values never influence the choice.
pub fn select(records: &[RunRecord], metric: &str, goal: Goal) -> Vec<Selection> {
    let mut groups: BTreeMap<(String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.cell.method(), r.seed)).or_default().push(r);
    }
    let better = |a: f64, b: f64| match goal {
        Goal::Minimize => a < b,
        Goal::Maximize => a > b,
    };
    let mut out = Vec::new();
    for ((method, seed), rs) in groups {
        let failed_cells = rs.iter().filter(|r| !r.completed()).count();
        let mut best: Option<(&RunRecord, f64)> = None;
        for r in rs.iter().filter(|r| r.completed()) {
            let Some(v) = r.final_metric("valid", metric) else { continue };
            if !v.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| better(v, b)) {
                best = Some((r, v));
            }
        }
        if let Some((r, v)) = best {
            out.push(Selection {
                method,
                seed,
                cell_id: r.cell_id.clone(),
                cell: r.cell.clone(),
                metric: metric.to_string(),
                valid: v,
                test: r.final_metric("test", metric).unwrap_or(f64::NAN),
                failed_cells,
            });
        }
    }
    out
}
