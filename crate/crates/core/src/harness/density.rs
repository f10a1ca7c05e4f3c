use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DensitySettings;
use crate::distributions::{gumbel_softmax_log_density, gumbel_softmax_sample, CategoricalParams, SimplexSample};
use crate::error::{Error, Result};
use crate::oracle::pairwise_sum;
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub tau: f64,
    pub y: Vec<f64>,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMean {
    pub tau: f64,
    pub samples: usize,
    pub mean: Vec<f64>,
}

/// Gumbel-Softmax density on an interior simplex grid, and sample means,
/// for each temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFigure {
    pub probs: Vec<f64>,
    pub grid: Vec<DensityPoint>,
    pub means: Vec<SampleMean>,
}

/// Interior points `i / r` of the simplex grid with `r` intervals per
/// edge: `r - 1` points for `k = 2`, `(r - 1)(r - 2) / 2` for `k = 3`.
pub fn simplex_grid(k: usize, r: usize) -> Result<Vec<Vec<f64>>> {
    let rf = r as f64;
    match k {
        2 => Ok((1..r).map(|i| vec![i as f64 / rf, (r - i) as f64 / rf]).collect()),
        3 => {
            let mut pts = Vec::new();
            for i in 1..r {
                for j in 1..r - i {
                    let l = r - i - j;
                    pts.push(vec![i as f64 / rf, j as f64 / rf, l as f64 / rf]);
                }
            }
            Ok(pts)
        }
        _ => Err(Error::InvalidArgument(format!("density grids cover k = 2 or 3, got {k}"))),
    }
}

pub fn emit_density_figure_data(settings: &DensitySettings, master_seed: u64) -> Result<DensityFigure> {
    let params = CategoricalParams::from_probs(&settings.probs)?;
    let k = params.k();
    let points = simplex_grid(k, settings.resolution)?;
    let mut grid = Vec::with_capacity(points.len() * settings.taus.len());
    let mut means = Vec::with_capacity(settings.taus.len());
    let mut rng = stream_rng(master_seed, 0, streams::NOISE);
    for &tau in &settings.taus {
        for y in &points {
            let s = SimplexSample::new(y.clone(), tau)?;
            grid.push(DensityPoint {
                tau,
                y: y.clone(),
                density: gumbel_softmax_log_density(&s, &params, tau)?.exp(),
            });
        }
        let mut cols = vec![Vec::with_capacity(settings.samples); k];
        for _ in 0..settings.samples {
            let s = gumbel_softmax_sample(&params, tau, &mut rng)?;
            for (c, v) in cols.iter_mut().zip(s.y.data()) {
                c.push(*v);
            }
        }
        means.push(SampleMean {
            tau,
            samples: settings.samples,
            mean: cols.iter().map(|c| pairwise_sum(c) / settings.samples as f64).collect(),
        });
    }
    Ok(DensityFigure {
        probs: params.probs(),
        grid,
        means,
    })
}

impl DensityFigure {
    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn density_csv(&self) -> String {
        let k = self.k();
        let mut s = String::from("tau");
        for i in 1..=k {
            let _ = write!(s, ",y{i}");
        }
        s.push_str(",density\n");
        for p in &self.grid {
            let _ = write!(s, "{}", p.tau);
            for v in &p.y {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{}", p.density);
        }
        s
    }

    pub fn means_csv(&self) -> String {
        let k = self.k();
        let mut s = String::from("tau,samples");
        for i in 1..=k {
            let _ = write!(s, ",mean{i}");
        }
        s.push('\n');
        for m in &self.means {
            let _ = write!(s, "{},{}", m.tau, m.samples);
            for v in &m.mean {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("density.csv"), self.density_csv())?;
        fs::write(dir.join("means.csv"), self.means_csv())?;
        Ok(())
    }
}
