use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine power model with Amdahl latency scaling.
///
/// Power while scanning on `c` cores is `p_base + c * p_core` watts; latency
/// is `t1 * ((1 - f) + f / c)` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    pub p_base: f64,
    pub p_core: f64,
    pub parallel_fraction: f64,
    pub t1: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            p_base: 0.5,
            p_core: 0.8,
            parallel_fraction: 0.7,
            t1: 0.8,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.p_base, self.p_core, self.parallel_fraction, self.t1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.p_base < 0.0 || self.p_core < 0.0 {
            return Err(Error::InvalidArgument(
                "energy model powers must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.parallel_fraction) {
            return Err(Error::InvalidArgument(format!(
                "parallel fraction {} outside [0, 1]",
                self.parallel_fraction
            )));
        }
        if self.t1 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "single-core latency t1 must be positive, got {}",
                self.t1
            )));
        }
        Ok(())
    }
}

pub fn latency_model(em: &EnergyModel, cores: u32) -> f64 {
    let c = cores.max(1) as f64;
    em.t1 * ((1.0 - em.parallel_fraction) + em.parallel_fraction / c)
}

pub fn energy_per_scan(em: &EnergyModel, cores: u32) -> f64 {
    (em.p_base + cores.max(1) as f64 * em.p_core) * latency_model(em, cores)
}
