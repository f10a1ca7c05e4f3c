//! Gumbel, Gumbel-Max, and Gumbel-Softmax sampling; the Gumbel-Softmax
//! density; temperature annealing; Bernoulli, categorical, and diagonal
//! Gaussian helpers.

mod density;
mod gumbel;
mod helpers;
mod schedule;

pub use density::gumbel_softmax_log_density;
pub use gumbel::*;
pub use helpers::*;
pub use schedule::AnnealSchedule;

use crate::error::{Error, Result};
use crate::graph::{argmax, Tensor};

/// Unnormalized log-probabilities of a `k`-way categorical variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    logits: Tensor,
}

impl CategoricalParams {
    /// `-inf` entries mark zero-probability classes; NaN and `+inf` are
    /// rejected.
    pub fn new(logits: Tensor) -> Result<Self> {
        if logits.rank() != 1 || logits.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "categorical logits must be a vector with k >= 2, got shape {:?}",
                logits.shape()
            )));
        }
        if logits.data().iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::InvalidArgument("logits contain NaN or +inf".into()));
        }
        Ok(CategoricalParams { logits })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        CategoricalParams::new(Tensor::vector(logits.to_vec()))
    }

    /// Logits `ln p_i` of a probability vector.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidArgument(format!("not probabilities: {probs:?}")));
        }
        CategoricalParams::new(Tensor::vector(probs.iter().map(|p| p.ln()).collect()))
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    /// Logits shifted so that `sum_i exp(x_i) = 1`.
    pub fn normalized_logits(&self) -> Vec<f64> {
        let x = self.logits.data();
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        x.iter().map(|v| v - lse).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.normalized_logits().into_iter().map(f64::exp).collect()
    }
}

/// A point of the open simplex together with the temperature it was drawn at.
///
/// Coordinates are positive in exact arithmetic; at very low temperature
/// the smallest ones can underflow to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSample {
    pub y: Tensor,
    pub temperature: f64,
}

impl SimplexSample {
    /// Validated construction for user-supplied points: every coordinate
    /// positive, sum within 1e-9 of one.
    pub fn new(y: Vec<f64>, temperature: f64) -> Result<Self> {
        if y.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::domain("simplex", "coordinates must be positive"));
        }
        let s: f64 = y.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::domain("simplex", format!("coordinates sum to {s}")));
        }
        Ok(SimplexSample {
            y: Tensor::vector(y),
            temperature,
        })
    }

    pub fn k(&self) -> usize {
        self.y.len()
    }

    /// Argmax with lowest-index tie-break.
    pub fn discretize(&self) -> OneHot {
        OneHot::new(self.k(), argmax(self.y.data())).expect("index in range")
    }
}

/// A corner of the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot {
    z: Tensor,
    index: usize,
}

impl OneHot {
    pub fn new(k: usize, index: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::InvalidArgument(format!("class {index} out of range for k = {k}")));
        }
        Ok(OneHot {
            z: Tensor::one_hot(k, index),
            index,
        })
    }

    /// Validates that exactly one entry is 1 and the rest are 0.
    pub fn from_tensor(z: &Tensor) -> Result<Self> {
        let ones: Vec<usize> = z
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        let zeros = z.data().iter().filter(|&&v| v == 0.0).count();
        if ones.len() != 1 || zeros + 1 != z.len() {
            return Err(Error::InvalidArgument(format!("not one-hot: {:?}", z.data())));
        }
        OneHot::new(z.len(), ones[0])
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.z
    }
}
