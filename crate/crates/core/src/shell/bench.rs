//! Float vs quantized benchmark: size, accuracy, agreement and latency.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::aicm::{decode_model, encode_model, size_ratio, Model};
use super::codec::read_file;
use super::image::{load_ppm, preprocess};
use crate::error::{Error, Result};
use crate::nnf::ModelGraph;
use crate::ptq::QuantModel;
use crate::runtime::{measure_latency, time_runs, LatencyStats};
use crate::tensor::FloatTensor;

pub const SIZE_NOTE: &str = "int8 weights bound the float/quant size ratio near 4x; \
int32 biases, quantization parameters and headers keep it slightly below. \
Reductions well beyond 4x need a larger float baseline or compression past per-tensor int8.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub reps: usize,
    pub perf_budget: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 20,
            perf_budget: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub core_count: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub float_model_bytes: usize,
    pub quant_model_bytes: usize,
    pub size_ratio: f64,
    pub size_note: String,
    pub samples: usize,
    pub float_accuracy: f64,
    pub quant_accuracy: f64,
    pub argmax_agreement: f64,
    /// Largest absolute difference between float and quantized output
    /// values over all samples. Reported, not asserted.
    pub max_output_deviation: f64,
    pub float_latency: LatencyStats,
    /// Quantized latency on one core.
    pub quant_latency: LatencyStats,
    /// Quantized latency at the performance budget.
    pub quant_latency_parallel: LatencyStats,
    pub parallel_budget: usize,
    /// `float_latency.median_s / quant_latency.median_s`.
    pub speedup_ratio: f64,
    pub environment: Environment,
}

pub fn core_count() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Benchmarks two in-memory models over labelled samples already shaped
/// for the model input.
pub fn bench_models(
    float: &ModelGraph,
    quant: &QuantModel,
    samples: &[(FloatTensor, usize)],
    opts: &BenchOptions,
    config_hash: String,
) -> Result<BenchReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one sample".into(),
        ));
    }
    let ratio = size_ratio(float, quant)?;
    let float_bytes = encode_model(&Model::Float(float.clone())).len();
    let quant_bytes = encode_model(&Model::Quant(quant.clone())).len();
    debug_assert_eq!(ratio, float_bytes as f64 / quant_bytes as f64);

    let (mut float_hits, mut quant_hits, mut agree) = (0usize, 0usize, 0usize);
    let mut deviation = 0.0f64;
    for (x, label) in samples {
        let (fy, qy) = (float.forward(x)?, quant.forward(x)?);
        for (a, b) in fy.data().iter().zip(qy.data()) {
            deviation = deviation.max((a - b).abs() as f64);
        }
        let (f, q) = (fy.argmax(), qy.argmax());
        float_hits += usize::from(f == *label);
        quant_hits += usize::from(q == *label);
        agree += usize::from(f == q);
    }
    let n = samples.len() as f64;

    let probe = &samples[0].0;
    let float_latency = time_runs(opts.reps, || float.forward(probe).map(drop))?;
    let quant_latency = measure_latency(quant, probe, 1, opts.reps)?;
    let quant_latency_parallel = measure_latency(quant, probe, opts.perf_budget, opts.reps)?;
    Ok(BenchReport {
        float_model_bytes: float_bytes,
        quant_model_bytes: quant_bytes,
        size_ratio: float_bytes as f64 / quant_bytes as f64,
        size_note: SIZE_NOTE.to_string(),
        samples: samples.len(),
        float_accuracy: float_hits as f64 / n,
        quant_accuracy: quant_hits as f64 / n,
        argmax_agreement: agree as f64 / n,
        max_output_deviation: deviation,
        speedup_ratio: float_latency.median_s / quant_latency.median_s,
        float_latency,
        quant_latency,
        quant_latency_parallel,
        parallel_budget: opts.perf_budget,
        environment: Environment {
            core_count: core_count(),
            config_hash,
        },
    })
}

/// Parses `filename,label` rows. Labels may be class names or indices; a
/// leading `filename,label` header row is skipped.
pub fn parse_labels(text: &str, classes: &[String], path: &Path) -> Result<Vec<(String, usize)>> {
    let err = |line: usize, reason: String| Error::Labels {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("filename,label")) {
            continue;
        }
        let (file, label) = line
            .split_once(',')
            .ok_or_else(|| err(i + 1, "expected `filename,label`".into()))?;
        let (file, label) = (file.trim(), label.trim());
        let index = match classes.iter().position(|c| c == label) {
            Some(k) => k,
            None => match label.parse::<usize>() {
                Ok(k) if k < classes.len() => k,
                _ => return Err(err(i + 1, format!("unknown label {label:?}"))),
            },
        };
        rows.push((file.to_string(), index));
    }
    if rows.is_empty() {
        return Err(err(0, "no labelled rows".into()));
    }
    Ok(rows)
}

fn hash_inputs(parts: &[&[u8]], opts: &BenchOptions) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.update(serde_json::to_vec(opts).expect("options serialize"));
    hex::encode(h.finalize())
}

pub fn bench(
    float_path: &Path,
    quant_path: &Path,
    dataset_dir: &Path,
    labels_path: &Path,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    let float_bytes = read_file(float_path)?;
    let quant_bytes = read_file(quant_path)?;
    let labels_bytes = read_file(labels_path)?;
    let float = match decode_model(&float_bytes, float_path)? {
        Model::Float(g) => g,
        Model::Quant(_) => {
            return Err(Error::Malformed {
                path: float_path.to_path_buf(),
                reason: "expected a float model, found a quantized one".into(),
            })
        }
    };
    let quant = match decode_model(&quant_bytes, quant_path)? {
        Model::Quant(m) => m,
        Model::Float(_) => {
            return Err(Error::Malformed {
                path: quant_path.to_path_buf(),
                reason: "expected a quantized model, found a float one".into(),
            })
        }
    };
    if float.class_labels() != quant.class_labels() {
        return Err(Error::ArchitectureMismatch(format!(
            "{} and {} carry different class labels",
            float_path.display(),
            quant_path.display()
        )));
    }
    let text = String::from_utf8(labels_bytes.clone()).map_err(|_| Error::Labels {
        path: labels_path.to_path_buf(),
        reason: "not valid UTF-8".into(),
    })?;
    let classes = match float.validate()?.last() {
        Some(s) if float.class_labels().is_empty() => {
            (0..s.element_count()).map(|i| i.to_string()).collect()
        }
        _ => float.class_labels().to_vec(),
    };
    let rows = parse_labels(&text, &classes, labels_path)?;
    let samples = rows
        .iter()
        .map(|(file, label)| {
            let img = load_ppm(&dataset_dir.join(file))?;
            Ok((preprocess(&img, float.input_shape())?, *label))
        })
        .collect::<Result<Vec<_>>>()?;
    let hash = hash_inputs(&[&float_bytes, &quant_bytes, &labels_bytes], opts);
    bench_models(&float, &quant, &samples, opts, hash)
}
