use super::Tensor;
use crate::error::{Error, Result};

/// Velocity buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    velocity: Vec<Tensor>,
}

impl MomentumState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        MomentumState {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// Classical (Polyak) momentum: `v <- momentum * v + grad`, `p <- p - lr * v`.
///
/// Any non-finite gradient entry aborts the whole step before anything is
/// written, leaving both `params` and `state` untouched.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    lr: f64,
    state: &mut MomentumState,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!("param {i}: {:?} / {:?} / {:?}", p.shape(), g.shape(), v.shape()),
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
