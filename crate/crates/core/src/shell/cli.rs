//! `aicom` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

use super::aicm::{encode_model, load_model, save_model, Model};
use super::bench::{bench, BenchOptions};
use super::codec::{read_file, write_file};
use super::image::{load_ppm, preprocess, save_ppm};
use super::screen::{screen, Thresholds};
use crate::eqo::{decide, working_set_estimate, DeviceState, GovernorPolicy};
use crate::error::Error;
use crate::nnf::{fixture_dataset, fixture_model, ModelGraph, FIXTURE_LABELS};
use crate::ptq::{calibrate_with, quantize_model, CalibrationMethod, QuantModel};
use crate::runtime::{simulate, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "aicom", version, about = "On-device INT8 screening toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic fixture model, images and labels.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Calibrate a float model on a directory of PPM images and quantize it.
    #[command(name = "calibrate+quantize", visible_alias = "quantize")]
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clip site ranges to this percentile instead of min/max.
        #[arg(long)]
        percentile: Option<f64>,
    },
    /// Screen one image and print the result as JSON.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        positive_label: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        tau_pos: f64,
        #[arg(long, default_value_t = 0.1)]
        tau_margin: f64,
    },
    /// Compare float and quantized models on a labelled image set.
    Bench {
        #[arg(long = "float")]
        float_model: PathBuf,
        #[arg(long = "quant")]
        quant_model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(3..))]
        reps: u64,
    },
    /// Print the governor decision for a device snapshot.
    Govern {
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the battery discharge simulation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn percent(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=100.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 100]"))
    }
}

fn headroom(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() && v >= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be a finite value >= 1"))
    }
}

#[derive(Debug, Args)]
struct DeviceArgs {
    /// Battery charge in percent.
    #[arg(long, default_value_t = 100.0, value_parser = percent)]
    battery: f64,
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    charging: bool,
    /// Available memory in bytes.
    #[arg(long, default_value_t = 4 << 30)]
    mem: u64,
    /// Total CPU cores; defaults to the cores of this machine.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    cores: Option<u32>,
}

impl DeviceArgs {
    fn state(&self) -> DeviceState {
        DeviceState {
            battery_pct: self.battery,
            charging: self.charging,
            available_memory_bytes: self.mem,
            total_cores: self
                .cores
                .unwrap_or_else(|| super::bench::core_count().try_into().unwrap_or(u32::MAX)),
        }
    }
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[arg(long, default_value_t = 75.0, value_parser = percent)]
    threshold: f64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    perf_cores: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    saving_cores: u32,
    #[arg(long, default_value_t = 1.5, value_parser = headroom)]
    headroom: f64,
}

impl PolicyArgs {
    fn policy(&self) -> Result<GovernorPolicy, Failure> {
        if self.saving_cores > self.perf_cores {
            return Err(Failure::usage(format!(
                "--saving-cores {} exceeds --perf-cores {}",
                self.saving_cores, self.perf_cores
            )));
        }
        Ok(GovernorPolicy {
            battery_threshold_pct: self.threshold,
            perf_core_cap: self.perf_cores,
            saving_core_cap: self.saving_cores,
            memory_headroom_factor: self.headroom,
        })
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: String) -> Self {
        Failure { code: 1, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

/// Tags errors that do not name a file with the file being processed.
fn about(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let names_file = matches!(
            e,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::CrcMismatch { .. }
                | Error::Truncated { .. }
                | Error::Malformed { .. }
                | Error::UnsupportedImage { .. }
                | Error::Labels { .. }
                | Error::Json { .. }
        );
        if names_file {
            e.into()
        } else {
            Failure {
                code: 2,
                message: format!("{}: {e}", path.display()),
            }
        }
    }
}

fn load_float(path: &Path) -> Result<ModelGraph, Failure> {
    match load_model(path)? {
        Model::Float(g) => Ok(g),
        Model::Quant(_) => Err(Failure {
            code: 2,
            message: format!(
                "{}: expected a float model, found a quantized one",
                path.display()
            ),
        }),
    }
}

fn load_quant(path: &Path) -> Result<QuantModel, Failure> {
    match load_model(path)? {
        Model::Quant(m) => Ok(m),
        Model::Float(_) => Err(Failure {
            code: 2,
            message: format!(
                "{}: expected a quantized model, found a float one",
                path.display()
            ),
        }),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report types serialize")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("report types serialize");
    Ok(write_file(path, text.as_bytes())?)
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("ppm"))
        {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Failure {
            code: 2,
            message: format!("{}: no .ppm calibration images", dir.display()),
        });
    }
    Ok(files)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Fixture { out: dir, n, seed } => {
            let images = dir.join("images");
            create_dir(&images)?;
            save_model(&Model::Float(fixture_model()), &dir.join("float.aicm"))?;
            let mut csv = String::from("filename,label\n");
            for (i, (x, label)) in fixture_dataset(n, seed).iter().enumerate() {
                let name = format!("img_{i:04}.ppm");
                save_ppm(x, &images.join(&name))?;
                csv.push_str(&format!("{name},{}\n", FIXTURE_LABELS[*label]));
            }
            write_file(&dir.join("labels.csv"), csv.as_bytes())?;
            let _ = writeln!(out, "wrote {} with {n} images", dir.display());
        }
        Command::Quantize {
            model,
            calib,
            out: target,
            percentile,
        } => {
            let g = load_float(&model)?;
            let method = match percentile {
                Some(p) if !(p > 50.0 && p <= 100.0) => {
                    return Err(Failure::usage(format!(
                        "--percentile {p} is outside (50, 100]"
                    )))
                }
                Some(p) => CalibrationMethod::Percentile(p),
                None => CalibrationMethod::MinMax,
            };
            let samples = ppm_files(&calib)?
                .iter()
                .map(|p| {
                    let img = load_ppm(p)?;
                    preprocess(&img, g.input_shape()).map_err(about(p))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            let stats = calibrate_with(&g, &samples, method).map_err(about(&calib))?;
            let q = quantize_model(&g, &stats).map_err(about(&model))?;
            let (float_bytes, quant_bytes) = (
                encode_model(&Model::Float(g)).len(),
                encode_model(&Model::Quant(q.clone())).len(),
            );
            save_model(&Model::Quant(q), &target)?;
            let _ = writeln!(
                out,
                "{}",
                json(&serde_json::json!({
                    "calibration_samples": samples.len(),
                    "float_model_bytes": float_bytes,
                    "quant_model_bytes": quant_bytes,
                    "size_ratio": float_bytes as f64 / quant_bytes as f64,
                }))
            );
        }
        Command::Infer {
            model,
            image,
            device,
            policy,
            positive_label,
            tau_pos,
            tau_margin,
        } => {
            let policy = policy.policy()?;
            let m = load_quant(&model)?;
            let img = load_ppm(&image)?;
            let thresholds = Thresholds {
                tau_pos,
                tau_margin,
                positive_label,
            };
            let result =
                screen(&m, &img, &device.state(), &policy, &thresholds).map_err(about(&model))?;
            let _ = writeln!(out, "{}", json(&result));
        }
        Command::Bench {
            float_model,
            quant_model,
            data,
            labels,
            report,
            reps,
        } => {
            let opts = BenchOptions {
                reps: reps as usize,
                ..Default::default()
            };
            let r =
                bench(&float_model, &quant_model, &data, &labels, &opts).map_err(about(&data))?;
            write_json(&report, &r)?;
            let _ = writeln!(
                out,
                "{}",
                json(&serde_json::json!({
                    "size_ratio": r.size_ratio,
                    "float_accuracy": r.float_accuracy,
                    "quant_accuracy": r.quant_accuracy,
                    "argmax_agreement": r.argmax_agreement,
                    "speedup_ratio": r.speedup_ratio,
                }))
            );
        }
        Command::Govern {
            device,
            policy,
            model,
        } => {
            let policy = policy.policy()?;
            let m = load_quant(&model)?;
            let decision = decide(&policy, &device.state(), working_set_estimate(&m));
            let _ = writeln!(out, "{}", json(&decision));
        }
        Command::Simulate { config, report } => {
            let text = read_file(&config)?;
            let cfg: SimConfig = serde_json::from_slice(&text).map_err(|e| Error::Json {
                path: config.clone(),
                source: e,
            })?;
            let r = simulate(&cfg).map_err(about(&config))?;
            write_json(&report, &r)?;
            let _ = writeln!(
                out,
                "{}",
                json(&serde_json::json!({
                    "scans": r.scans,
                    "additional_scans": r.additional_scans,
                    "extension_ratio": r.extension_ratio,
                }))
            );
        }
    }
    Ok(())
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
