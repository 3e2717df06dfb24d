use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::energy::{energy_per_scan, latency_model, EnergyModel};
use crate::eqo::{decide, DeviceState, GovernorPolicy, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity_joules: f64,
    /// Starting charge; a full battery when absent.
    #[serde(default)]
    pub level_joules: Option<f64>,
}

impl Battery {
    pub fn full(capacity_joules: f64) -> Self {
        Battery {
            capacity_joules,
            level_joules: None,
        }
    }

    pub fn start_level(&self) -> f64 {
        self.level_joules.unwrap_or(self.capacity_joules)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.capacity_joules.is_finite() || self.capacity_joules < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "battery capacity must be finite and non-negative, got {}",
                self.capacity_joules
            )));
        }
        let level = self.start_level();
        if !level.is_finite() || level < 0.0 || level > self.capacity_joules {
            return Err(Error::InvalidArgument(format!(
                "battery level {level} outside [0, {}]",
                self.capacity_joules
            )));
        }
        Ok(())
    }
}

impl Default for Battery {
    fn default() -> Self {
        Battery::full(30_000.0)
    }
}

/// Static part of the device seen by the governor during a simulated
/// discharge. The device never charges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceTemplate {
    pub available_memory_bytes: u64,
    pub total_cores: u32,
}

impl Default for DeviceTemplate {
    fn default() -> Self {
        DeviceTemplate {
            available_memory_bytes: 4 << 30,
            total_cores: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub battery: Battery,
    pub energy_model: EnergyModel,
    pub policy: GovernorPolicy,
    pub device: DeviceTemplate,
    /// Working set fed to the governor's memory check.
    pub working_set_bytes: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.battery.validate()?;
        self.energy_model.validate()?;
        self.policy.validate()?;
        if self.device.total_cores == 0 {
            return Err(Error::InvalidArgument(
                "total_cores must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AlwaysPerformance,
    AlwaysSaving,
    Eqo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Battery percentage seen by the governor before the scan.
    pub battery_pct: f64,
    pub mode: Mode,
    pub cores: u32,
    pub energy_joules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub scans: u64,
    pub energy_used_joules: f64,
    pub trace: Vec<TraceEntry>,
}

impl StrategyRun {
    pub fn scans_in_mode(&self, mode: Mode) -> u64 {
        self.trace.iter().filter(|e| e.mode == mode).count() as u64
    }
}

/// Runs scans back to back until the next scan no longer fits in the
/// remaining charge.
pub fn run_strategy(cfg: &SimConfig, strategy: Strategy) -> Result<StrategyRun> {
    cfg.validate()?;
    let capacity = cfg.battery.capacity_joules;
    let start = cfg.battery.start_level();
    let cores = cfg.device.total_cores;
    let fixed = |mode| match mode {
        Mode::Performance => (mode, cfg.policy.perf_core_cap.min(cores)),
        Mode::EnergySaving => (mode, cfg.policy.saving_core_cap.min(cores)),
    };
    for c in [fixed(Mode::Performance).1, fixed(Mode::EnergySaving).1] {
        if energy_per_scan(&cfg.energy_model, c) <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "per-scan energy on {c} cores is not positive"
            )));
        }
    }
    let mut used = 0.0;
    let mut trace = Vec::new();
    if capacity > 0.0 {
        loop {
            let battery_pct = 100.0 * (start - used) / capacity;
            let (mode, budget) = match strategy {
                Strategy::AlwaysPerformance => fixed(Mode::Performance),
                Strategy::AlwaysSaving => fixed(Mode::EnergySaving),
                Strategy::Eqo => {
                    let state = DeviceState {
                        battery_pct,
                        charging: false,
                        available_memory_bytes: cfg.device.available_memory_bytes,
                        total_cores: cores,
                    };
                    let d = decide(&cfg.policy, &state, cfg.working_set_bytes);
                    (d.mode, d.core_budget)
                }
            };
            let energy = energy_per_scan(&cfg.energy_model, budget);
            if used + energy > start {
                break;
            }
            used += energy;
            trace.push(TraceEntry {
                battery_pct,
                mode,
                cores: budget,
                energy_joules: energy,
            });
        }
    }
    Ok(StrategyRun {
        strategy,
        scans: trace.len() as u64,
        energy_used_joules: used,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyScans {
    pub always_performance: u64,
    pub always_saving: u64,
    pub eqo: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub performance: u64,
    pub energy_saving: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub cores: u32,
    pub latency_s: f64,
    pub energy_joules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub scans: StrategyScans,
    pub eqo_scans_by_mode: ModeCounts,
    /// EQO scans minus always-performance scans.
    pub additional_scans: i64,
    /// `additional_scans / always_performance`, 0 when the baseline ran no
    /// scans.
    pub extension_ratio: f64,
    pub energy_table: Vec<EnergyRow>,
    pub eqo_trace: Vec<TraceEntry>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    let perf = run_strategy(cfg, Strategy::AlwaysPerformance)?;
    let saving = run_strategy(cfg, Strategy::AlwaysSaving)?;
    let eqo = run_strategy(cfg, Strategy::Eqo)?;
    let additional = eqo.scans as i64 - perf.scans as i64;
    let extension_ratio = if perf.scans == 0 {
        0.0
    } else {
        additional as f64 / perf.scans as f64
    };
    let mut table = BTreeMap::new();
    for c in 1..=cfg
        .device
        .total_cores
        .max(cfg.policy.perf_core_cap.min(cfg.device.total_cores))
    {
        table.insert(
            c,
            EnergyRow {
                cores: c,
                latency_s: latency_model(&cfg.energy_model, c),
                energy_joules: energy_per_scan(&cfg.energy_model, c),
            },
        );
    }
    Ok(SimReport {
        config: *cfg,
        scans: StrategyScans {
            always_performance: perf.scans,
            always_saving: saving.scans,
            eqo: eqo.scans,
        },
        eqo_scans_by_mode: ModeCounts {
            performance: eqo.scans_in_mode(Mode::Performance),
            energy_saving: eqo.scans_in_mode(Mode::EnergySaving),
        },
        additional_scans: additional,
        extension_ratio,
        energy_table: table.into_values().collect(),
        eqo_trace: eqo.trace,
    })
}
