use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CostFunction, LatentKind};
use crate::graph::{Graph, Tensor, Var};
use crate::rng::stream_rng;

/// Largest outcome space [`EnumerationTestbed`] will enumerate.
pub const MAX_OUTCOMES: u64 = 4096;

/// Closed-form costs used by the testbeds, all graph-buildable on relaxed
/// inputs as well as on discrete outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TestbedCost {
    Constant { value: f64 },
    /// `c · z`.
    Linear { c: Vec<f64> },
    /// `(c · z - offset)²`.
    Quadratic { c: Vec<f64>, offset: f64 },
    /// `Σ c_i z_i³`.
    Cubic { c: Vec<f64> },
    /// `(z - center)ᵀ W (z - center)` with `W` row-major `u × u`; the slope
    /// vanishes at `z = center`.
    Centered { w: Vec<f64>, center: f64 },
    /// Multilinear interpolation of a table over `{0, 1}^u`, outcome
    /// index `Σ z_i 2^i`.
    Table { values: Vec<f64> },
}

impl TestbedCost {
    fn check(&self, units: usize) -> Result<()> {
        let ok = match self {
            TestbedCost::Constant { .. } => true,
            TestbedCost::Linear { c } | TestbedCost::Quadratic { c, .. } | TestbedCost::Cubic { c } => c.len() == units,
            TestbedCost::Centered { w, .. } => w.len() == units * units,
            TestbedCost::Table { values } => units < 13 && values.len() == 1 << units,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("cost {self:?} does not fit {units} units")))
        }
    }

    /// Plain evaluation at one point.
    pub fn value(&self, z: &[f64]) -> f64 {
        let dot = |c: &[f64]| c.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        match self {
            TestbedCost::Constant { value } => *value,
            TestbedCost::Linear { c } => dot(c),
            TestbedCost::Quadratic { c, offset } => (dot(c) - offset).powi(2),
            TestbedCost::Cubic { c } => c.iter().zip(z).map(|(a, b)| a * b.powi(3)).sum(),
            TestbedCost::Centered { w, center } => {
                let u = z.len();
                let d: Vec<f64> = z.iter().map(|v| v - center).collect();
                (0..u)
                    .map(|i| (0..u).map(|j| d[i] * w[i * u + j] * d[j]).sum::<f64>())
                    .sum()
            }
            TestbedCost::Table { values } => values
                .iter()
                .enumerate()
                .map(|(o, v)| {
                    let weight: f64 = z
                        .iter()
                        .enumerate()
                        .map(|(i, zi)| if (o >> i) & 1 == 1 { *zi } else { 1.0 - zi })
                        .product();
                    v * weight
                })
                .sum(),
        }
    }
}

fn column(values: &[f64]) -> Result<Tensor> {
    Tensor::new(vec![values.len(), 1], values.to_vec())
}

impl CostFunction for TestbedCost {
    fn build(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let [n, u] = *g.shape(z) else {
            return Err(Error::shape("testbed_cost", "samples must be [n, units]"));
        };
        self.check(u)?;
        let flat = |g: &mut Graph, v: Var| g.reshape(v, &[n]);
        match self {
            TestbedCost::Constant { value } => Ok(g.constant(Tensor::full(&[n], *value))),
            TestbedCost::Linear { c } => {
                let w = g.constant(column(c)?);
                let out = g.matmul(z, w)?;
                flat(g, out)
            }
            TestbedCost::Quadratic { c, offset } => {
                let w = g.constant(column(c)?);
                let out = g.matmul(z, w)?;
                let shifted = g.add_scalar(out, -offset)?;
                let sq = g.mul(shifted, shifted)?;
                flat(g, sq)
            }
            TestbedCost::Cubic { c } => {
                let sq = g.mul(z, z)?;
                let cube = g.mul(sq, z)?;
                let w = g.constant(column(c)?);
                let out = g.matmul(cube, w)?;
                flat(g, out)
            }
            TestbedCost::Centered { w, center } => {
                let d = g.add_scalar(z, -center)?;
                let wv = g.constant(Tensor::new(vec![u, u], w.clone())?);
                let dw = g.matmul(d, wv)?;
                let prod = g.mul(dw, d)?;
                g.sum(prod, 1)
            }
            TestbedCost::Table { values } => {
                // features Φ [n, 2^i] grow one unit at a time
                let mut phi = g.constant(Tensor::full(&[n, 1], 1.0));
                for i in 0..u {
                    let width = 1usize << i;
                    let zi = g.slice(z, 1, i, i + 1)?;
                    let ones = g.constant(Tensor::full(&[1, width], 1.0));
                    let zi_wide = g.matmul(zi, ones)?;
                    let on = g.mul(phi, zi_wide)?;
                    let off = g.sub(phi, on)?;
                    phi = g.concat(&[off, on], 1)?;
                }
                let t = g.constant(column(values)?);
                let out = g.matmul(phi, t)?;
                flat(g, out)
            }
        }
    }
}

/// Small discrete problem whose expectation can be enumerated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationTestbed {
    pub id: String,
    pub kind: LatentKind,
    /// Logits `[units]`.
    pub logits: Vec<f64>,
    pub cost: TestbedCost,
}

impl EnumerationTestbed {
    pub fn new(id: impl Into<String>, kind: LatentKind, logits: Vec<f64>, cost: TestbedCost) -> Result<Self> {
        kind.check_units(logits.len())?;
        cost.check(logits.len())?;
        let tb = EnumerationTestbed {
            id: id.into(),
            kind,
            logits,
            cost,
        };
        tb.outcome_count()?;
        Ok(tb)
    }

    pub fn units(&self) -> usize {
        self.logits.len()
    }

    pub fn logits_tensor(&self) -> Tensor {
        Tensor::vector(self.logits.clone())
    }

    pub fn outcome_count(&self) -> Result<u64> {
        let u = self.units() as u32;
        let count = match self.kind {
            LatentKind::Bernoulli => 2u64.checked_pow(u),
            LatentKind::Categorical { k } => (k as u64).checked_pow(u / k as u32),
        };
        match count {
            Some(c) if c <= MAX_OUTCOMES => Ok(c),
            Some(c) => Err(Error::OutcomeSpaceTooLarge(c)),
            None => Err(Error::OutcomeSpaceTooLarge(u64::MAX)),
        }
    }

    /// Every outcome as a row of `[M, units]`. Bernoulli row `o` has bit
    /// `i` equal to `(o >> i) & 1`; categorical rows enumerate the first
    /// group fastest.
    pub fn outcomes(&self) -> Result<Tensor> {
        let m = self.outcome_count()? as usize;
        let u = self.units();
        let mut data = vec![0.0; m * u];
        for o in 0..m {
            let row = &mut data[o * u..(o + 1) * u];
            match self.kind {
                LatentKind::Bernoulli => {
                    for (i, v) in row.iter_mut().enumerate() {
                        *v = ((o >> i) & 1) as f64;
                    }
                }
                LatentKind::Categorical { k } => {
                    let mut rest = o;
                    for group in 0..u / k {
                        row[group * k + rest % k] = 1.0;
                        rest /= k;
                    }
                }
            }
        }
        Tensor::new(vec![m, u], data)
    }

    /// `L(θ) = Σ_z p_θ(z) f(z)` built on a logits leaf `[units]`.
    fn expectation_node(&self, g: &mut Graph, logits: Var) -> Result<Var> {
        let outcomes = self.outcomes()?;
        let m = outcomes.shape()[0];
        let u = self.units();
        let zc = g.constant(outcomes.clone());
        let log_p = match self.kind {
            LatentKind::Bernoulli => {
                // log σ(a) = -softplus(-a), log(1 - σ(a)) = -softplus(a)
                let col = g.reshape(logits, &[u, 1])?;
                let neg = g.neg(col)?;
                let sp_neg = g.softplus(neg)?;
                let log_on = g.neg(sp_neg)?;
                let sp = g.softplus(col)?;
                let log_off = g.neg(sp)?;
                let off = g.constant(outcomes.map(|v| 1.0 - v));
                let a = g.matmul(zc, log_on)?;
                let b = g.matmul(off, log_off)?;
                g.add(a, b)?
            }
            LatentKind::Categorical { k } => {
                let grouped = g.reshape(logits, &[u / k, k])?;
                let lsm = g.log_softmax(grouped, 1)?;
                let col = g.reshape(lsm, &[u, 1])?;
                g.matmul(zc, col)?
            }
        };
        let p = g.exp(log_p)?;
        let p = g.reshape(p, &[m])?;
        let f = self.cost.build(g, zc)?;
        let pf = g.mul(p, f)?;
        g.sum_all(pf)
    }

    /// Exact `E[f(z)]`.
    pub fn expected_value(&self) -> Result<f64> {
        self.expected_value_at(&self.logits)
    }

    pub fn expected_value_at(&self, logits: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let l = g.constant(Tensor::vector(logits.to_vec()));
        let e = self.expectation_node(&mut g, l)?;
        Ok(g.value(e).data()[0])
    }

    /// Total probability of the enumerated outcomes (1 up to rounding).
    pub fn total_probability(&self) -> Result<f64> {
        let unit = EnumerationTestbed {
            cost: TestbedCost::Constant { value: 1.0 },
            ..self.clone()
        };
        unit.expected_value()
    }

    /// Exact `∇_θ E[f(z)]` by autodiff through the enumeration.
    pub fn exact_expected_gradient(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let l = g.param(self.logits_tensor());
        let e = self.expectation_node(&mut g, l)?;
        let grads = g.backward(e)?;
        Ok(grads.get_or_zeros(l, &[self.units()]))
    }

    // Named testbeds used by the audit suites.

    /// `k = 2`, `π = (0.3, 0.7)`, `f = 1` on class 0.
    pub fn categorical_indicator() -> Self {
        EnumerationTestbed::new(
            "cat2_indicator",
            LatentKind::Categorical { k: 2 },
            vec![0.3f64.ln(), 0.7f64.ln()],
            TestbedCost::Linear { c: vec![1.0, 0.0] },
        )
        .expect("valid testbed")
    }

    /// `k = 3`, `π = (0.2, 0.3, 0.5)`, linear cost.
    pub fn categorical_linear() -> Self {
        EnumerationTestbed::new(
            "cat3_linear",
            LatentKind::Categorical { k: 3 },
            vec![0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()],
            TestbedCost::Linear { c: vec![1.0, -2.0, 3.0] },
        )
        .expect("valid testbed")
    }

    /// `k = 3`, a distinct constant per class.
    pub fn categorical_table() -> Self {
        EnumerationTestbed::new(
            "cat3_table",
            LatentKind::Categorical { k: 3 },
            vec![0.4, -0.3, 0.1],
            TestbedCost::Linear { c: vec![2.0, -1.0, 0.5] },
        )
        .expect("valid testbed")
    }

    /// `k = 4`, `(c · z - 1)²`: identical to a linear cost on the corners
    /// but curved in between, so straight-through is biased.
    pub fn categorical_quadratic() -> Self {
        EnumerationTestbed::new(
            "cat4_quadratic",
            LatentKind::Categorical { k: 4 },
            vec![0.5, -0.2, 0.0, 0.3],
            TestbedCost::Quadratic {
                c: vec![1.0, 2.0, -1.0, 0.5],
                offset: 1.0,
            },
        )
        .expect("valid testbed")
    }

    /// One Bernoulli(0.3) unit, `f = z³`.
    pub fn bernoulli_cubic() -> Self {
        EnumerationTestbed::new(
            "bern1_cubic",
            LatentKind::Bernoulli,
            vec![(0.3f64 / 0.7).ln()],
            TestbedCost::Cubic { c: vec![1.0] },
        )
        .expect("valid testbed")
    }

    /// One Bernoulli(0.3) unit, `f = z²`.
    pub fn bernoulli_quadratic() -> Self {
        EnumerationTestbed::new(
            "bern1_quadratic",
            LatentKind::Bernoulli,
            vec![(0.3f64 / 0.7).ln()],
            TestbedCost::Quadratic { c: vec![1.0], offset: 0.0 },
        )
        .expect("valid testbed")
    }

    /// Three Bernoulli units, quadratic with zero slope at `z = 1/2`.
    pub fn bernoulli_centered_quadratic() -> Self {
        EnumerationTestbed::new(
            "bern3_centered_quadratic",
            LatentKind::Bernoulli,
            vec![-0.8, 0.4, 1.1],
            TestbedCost::Centered {
                w: vec![1.0, 0.8, -0.6, 0.8, 0.5, 1.2, -0.6, 1.2, -0.4],
                center: 0.5,
            },
        )
        .expect("valid testbed")
    }

    /// `bits` Bernoulli units with a random cost table in `[-1, 1]` and
    /// logits in `[-1.5, 1.5]`, drawn from `seed`.
    pub fn bernoulli_table(bits: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0, 0);
        let logits = (0..bits).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let values = (0..1usize << bits.min(13)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        EnumerationTestbed::new(
            format!("bern{bits}_table"),
            LatentKind::Bernoulli,
            logits,
            TestbedCost::Table { values },
        )
    }
}
