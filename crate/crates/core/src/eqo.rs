//! Context-aware resource governor.
//!
//! Maps a device snapshot to an execution mode and a core budget:
//! Performance when the device is charging, or when the battery is above the
//! threshold and memory is sufficient; EnergySaving otherwise. Decisions are
//! pure per snapshot; there is no hysteresis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ptq::QuantModel;

/// Fixed per-process overhead added to every working-set estimate.
pub const WORKING_SET_OVERHEAD: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub battery_pct: f64,
    pub charging: bool,
    pub available_memory_bytes: u64,
    pub total_cores: u32,
}

impl DeviceState {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.battery_pct) {
            return Err(Error::InvalidArgument(format!(
                "battery_pct {} outside [0, 100]",
                self.battery_pct
            )));
        }
        if self.total_cores == 0 {
            return Err(Error::InvalidArgument(
                "total_cores must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GovernorPolicy {
    pub battery_threshold_pct: f64,
    pub perf_core_cap: u32,
    pub saving_core_cap: u32,
    pub memory_headroom_factor: f64,
}

impl Default for GovernorPolicy {
    fn default() -> Self {
        GovernorPolicy {
            battery_threshold_pct: 75.0,
            perf_core_cap: 4,
            saving_core_cap: 1,
            memory_headroom_factor: 1.5,
        }
    }
}

impl GovernorPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.battery_threshold_pct) {
            return Err(Error::InvalidArgument(format!(
                "battery threshold {} outside [0, 100]",
                self.battery_threshold_pct
            )));
        }
        if self.saving_core_cap < 1 || self.saving_core_cap > self.perf_core_cap {
            return Err(Error::InvalidArgument(format!(
                "core caps must satisfy 1 <= saving ({}) <= performance ({})",
                self.saving_core_cap, self.perf_core_cap
            )));
        }
        if !(self.memory_headroom_factor >= 1.0 && self.memory_headroom_factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "memory headroom factor {} must be a finite value >= 1",
                self.memory_headroom_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Performance,
    EnergySaving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernorDecision {
    pub mode: Mode,
    pub core_budget: u32,
}

/// Weight and bias bytes, two copies of the largest activation, and a fixed
/// 1 MiB overhead.
pub fn working_set_estimate(m: &QuantModel) -> u64 {
    m.parameter_bytes() as u64 + 2 * m.largest_activation() as u64 + WORKING_SET_OVERHEAD
}

pub fn memory_sufficient(s: &DeviceState, working_set: u64, p: &GovernorPolicy) -> bool {
    s.available_memory_bytes as f64 >= p.memory_headroom_factor * working_set as f64
}

pub fn decide(p: &GovernorPolicy, s: &DeviceState, working_set: u64) -> GovernorDecision {
    let performance = s.charging
        || (s.battery_pct > p.battery_threshold_pct && memory_sufficient(s, working_set, p));
    if performance {
        GovernorDecision {
            mode: Mode::Performance,
            core_budget: p.perf_core_cap.min(s.total_cores),
        }
    } else {
        GovernorDecision {
            mode: Mode::EnergySaving,
            core_budget: p.saving_core_cap.min(s.total_cores),
        }
    }
}
