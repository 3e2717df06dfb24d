//! Application layer: model and tensor files, image ingestion, screening,
//! benchmarking and the CLI.

mod aicm;
mod atns;
mod bench;
pub mod cli;
mod codec;
mod image;
mod screen;

pub use aicm::{
    decode_model, encode_model, load_model, save_model, serialized_size, size_ratio, Model,
};
pub use atns::{decode_tensor, encode_tensor, load_tensor, save_tensor, StoredTensor};
pub use bench::{
    bench, bench_models, core_count, parse_labels, BenchOptions, BenchReport, Environment,
    SIZE_NOTE,
};
pub use image::{decode_ppm, encode_ppm, load_ppm, preprocess, save_ppm};
pub use screen::{labels_of, screen, verdict, ScreeningResult, Thresholds, Verdict};
