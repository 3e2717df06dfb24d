//! Core-budgeted inference, the analytic latency/energy model and the
//! battery simulator.

mod energy;
mod latency;
mod parallel;
mod sim;

pub use energy::{energy_per_scan, latency_model, EnergyModel};
pub use latency::{measure_latency, time_runs, LatencyStats};
pub use parallel::{parallel_forward, partition, CoreBudget};
pub use sim::{
    run_strategy, simulate, Battery, DeviceTemplate, EnergyRow, ModeCounts, SimConfig, SimReport,
    Strategy, StrategyRun, StrategyScans, TraceEntry,
};
