//! Categorical reparameterization toolkit.
//!
//! * [`graph`]: dense-tensor reverse-mode autodiff and SGD with momentum.
//! * [`distributions`]: Gumbel, Gumbel-Max, Gumbel-Softmax (sampling,
//!   straight-through variant, closed-form density), annealing schedules,
//!   and Bernoulli/categorical/Gaussian helpers.
//! * [`estimators`]: score-function family (SF, NVIL, DARN, MuProp),
//!   straight-through family, and Gumbel-Softmax gradient estimators
//!   behind one interface.
//! * [`models`]: stochastic binary/categorical network, discrete-latent VAE,
//!   and the semi-supervised VAE.
//! * [`oracle`]: enumeration gradients, finite differences, simplex
//!   quadrature, and estimator audits.
//! * [`data`]: IDX loading, binarization, half splits, downsampling,
//!   synthetic data.
//! * [`harness`]: declarative experiment configs, grid runs, speed
//!   benchmark, and figure data.

// Checks such as `!(tau > 0.0)` are written negated so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod harness;
pub mod models;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{Graph, Tensor, Var};
