//! Post-training INT8 quantization and integer-only inference.
//!
//! Scheme: per-tensor symmetric weights, per-tensor asymmetric activations,
//! int32 biases, fixed-point requantization, float softmax tail. ReLU,
//! max-pool and flatten reuse their input site's parameters and are exact in
//! the integer domain.

mod calibrate;
mod kernels;
mod model;
mod params;

pub use calibrate::{
    calibrate, calibrate_with, site_count, CalibrationMethod, CalibrationStats, SiteStats,
};
pub use kernels::{
    qconv2d, qconv2d_with, qdense, qdense_with, qflatten, qmaxpool, qrelu, Sequential,
    UnitExecutor, MAX_MACS, MAX_MAC_MAGNITUDE,
};
pub use model::{forward_q, quantize_model, QConv2d, QDense, QuantLayer, QuantModel};
pub use params::{
    dequantize, dequantize_value, fxp_from_real, qparams_asym, qparams_sym, quantize_tensor,
    quantize_value, requant, round_half_away, FixedPointMultiplier,
};
