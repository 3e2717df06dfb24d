#![allow(dead_code)]

use aicom::nnf::{fixture_dataset, fixture_model, ModelGraph};
use aicom::ptq::{calibrate, quantize_model, QuantModel};

/// Fixture float model and its quantized form, calibrated on a sample set
/// disjoint from the evaluation seed.
pub fn fixture_pair() -> (ModelGraph, QuantModel) {
    let g = fixture_model();
    let calib: Vec<_> = fixture_dataset(200, 7)
        .into_iter()
        .map(|(x, _)| x)
        .collect();
    let stats = calibrate(&g, &calib).expect("calibration");
    let q = quantize_model(&g, &stats).expect("quantization");
    (g, q)
}

pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}
