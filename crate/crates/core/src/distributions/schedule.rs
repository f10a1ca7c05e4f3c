use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `τ(t) = max(floor, exp(-rate · t_N))` with `t_N = N · ⌊t / N⌋`, i.e. the
/// temperature only changes every `update_every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub rate: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    pub update_every: u64,
}

fn default_floor() -> f64 {
    0.5
}

impl AnnealSchedule {
    pub fn new(rate: f64, floor: f64, update_every: u64) -> Result<Self> {
        let s = AnnealSchedule {
            rate,
            floor,
            update_every,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) || !(self.floor > 0.0) || self.floor > 1.0 || self.update_every == 0 {
            return Err(Error::InvalidArgument(format!("bad anneal schedule {self:?}")));
        }
        Ok(())
    }

    pub fn temperature(&self, step: u64) -> f64 {
        let held = self.update_every * (step / self.update_every);
        (-self.rate * held as f64).exp().max(self.floor)
    }
}
