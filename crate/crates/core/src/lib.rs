//! On-device screening toolkit: INT8 post-training quantization, integer-only
//! CPU inference under a core budget, an energy-aware governor, and a battery
//! simulator.
//!
//! Modules follow the pipeline order:
//!
//! - [`tensor`]: row-major `f32`/`i8` tensors
//! - [`nnf`]: float model graph and the fixture classifier
//! - [`ptq`]: calibration, quantization and integer kernels
//! - [`eqo`]: the battery/charging/memory governor
//! - [`runtime`]: core-budgeted execution, energy model, battery simulation
//! - [`shell`]: file formats, image ingestion, screening, benchmarking, CLI

pub mod eqo;
pub mod error;
pub mod nnf;
pub mod ptq;
pub mod runtime;
pub mod shell;
pub mod tensor;

pub use error::{Error, Result};
