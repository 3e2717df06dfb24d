//! Acceptance suite: one PASS/FAIL line per criterion, with its time bound.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use aicom::eqo::{decide, DeviceState, GovernorPolicy, Mode};
use aicom::nnf::{fixture_dataset, ConvGeometry, ModelGraph};
use aicom::ptq::{
    dequantize, fxp_from_real, qconv2d, qdense, qparams_asym, qparams_sym, quantize_tensor,
    QConv2d, QDense, QuantModel,
};
use aicom::runtime::{
    measure_latency, parallel_forward, simulate, time_runs, Battery, DeviceTemplate, EnergyModel,
    SimConfig,
};
use aicom::shell::{
    decode_model, decode_tensor, encode_model, encode_tensor, screen, size_ratio, Model,
    StoredTensor, Thresholds,
};
use aicom::tensor::{FloatTensor, QuantParams, QuantTensor, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Pair = (ModelGraph, QuantModel);
type Criterion = (&'static str, fn(&Pair) -> Outcome, u64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn size_reduction((g, q): &Pair) -> Outcome {
    let ratio = size_ratio(g, q).map_err(|e| e.to_string())?;
    let f = encode_model(&Model::Float(g.clone())).len();
    let b = encode_model(&Model::Quant(q.clone())).len();
    ensure(ratio == f as f64 / b as f64, || {
        "ratio disagrees with byte counts".into()
    })?;
    ensure(ratio >= 3.8, || format!("ratio {ratio:.4} < 3.8"))?;
    Ok(format!("{f} B / {b} B = {ratio:.4} (>= 3.8)"))
}

fn accuracy_preservation((g, q): &Pair) -> Outcome {
    let data = fixture_dataset(500, 42);
    let (mut fh, mut qh, mut agree) = (0, 0, 0);
    for (x, label) in &data {
        let f = g.forward(x).map_err(|e| e.to_string())?.argmax();
        let p = q.forward(x).map_err(|e| e.to_string())?.argmax();
        fh += usize::from(f == *label);
        qh += usize::from(p == *label);
        agree += usize::from(f == p);
    }
    let n = data.len() as f64;
    let (fa, qa, ag) = (fh as f64 / n, qh as f64 / n, agree as f64 / n);
    ensure(fa == 1.0, || format!("float accuracy {fa}"))?;
    ensure(qa >= 0.99, || format!("quant accuracy {qa}"))?;
    ensure(ag >= 0.99, || format!("agreement {ag}"))?;
    Ok(format!("float {fa:.3}, quant {qa:.3}, agreement {ag:.3}"))
}

/// Plain nested loops in 64-bit, independent of the library kernels.
fn oracle_conv(x: &[i8], z_in: i32, c: usize, h: usize, w: usize, l: &QConv2d) -> Vec<i8> {
    let g = l.geometry;
    let oh = (h + 2 * g.padding - g.kh) / g.stride + 1;
    let ow = (w + 2 * g.padding - g.kw) / g.stride + 1;
    let mut out = Vec::new();
    for o in 0..g.out_ch {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = l.bias[o] as i64;
                for ci in 0..c {
                    for u in 0..g.kh {
                        for v in 0..g.kw {
                            let yy = (i * g.stride + u) as i64 - g.padding as i64;
                            let xx = (j * g.stride + v) as i64 - g.padding as i64;
                            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                                continue;
                            }
                            let xv =
                                x[(ci * h + yy as usize) * w + xx as usize] as i64 - z_in as i64;
                            let wv = l.weights[((o * c + ci) * g.kh + u) * g.kw + v] as i64;
                            acc += xv * wv;
                        }
                    }
                }
                out.push(oracle_requant(
                    acc,
                    l.multiplier.m0,
                    l.multiplier.shift,
                    l.output.zero_point,
                ));
            }
        }
    }
    out
}

fn oracle_requant(acc: i64, m0: i32, shift: u32, z: i32) -> i8 {
    // round(acc * m0 / 2^shift) half away from zero, in 128-bit
    let num = acc as i128 * m0 as i128;
    let den = 1i128 << shift;
    let mag = (2 * num.abs() + den) / (2 * den);
    let r = if num < 0 { -mag } else { mag };
    (r + z as i128).clamp(-128, 127) as i8
}

fn random_qp(rng: &mut ChaCha8Rng) -> QuantParams {
    QuantParams::new(rng.gen_range(0.001f32..0.1), rng.gen_range(-128..=127)).unwrap()
}

fn kernel_correctness(_: &Pair) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let (c, h, w) = (
            rng.gen_range(1..=4),
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
        );
        let input = random_qp(&mut rng);
        let output = random_qp(&mut rng);
        let weight_params = QuantParams::new(rng.gen_range(0.001f32..0.1), 0).unwrap();
        let multiplier =
            fxp_from_real(input.scale as f64 * weight_params.scale as f64 / output.scale as f64)
                .unwrap();
        let x: Vec<i8> = (0..c * h * w).map(|_| rng.gen()).collect();
        let qx = QuantTensor::new(Shape::new(vec![c, h, w]).unwrap(), x.clone(), input).unwrap();
        let padding = rng.gen_range(0..=2);
        let kh = rng.gen_range(1..=(h + 2 * padding).min(5));
        let kw = rng.gen_range(1..=(w + 2 * padding).min(5));
        let geometry = ConvGeometry {
            in_ch: c,
            out_ch: rng.gen_range(1..=4),
            kh,
            kw,
            stride: rng.gen_range(1..=3),
            padding,
        };
        let conv = QConv2d {
            geometry,
            weights: (0..geometry.weight_count())
                .map(|_| rng.gen_range(-127..=127))
                .collect(),
            weight_params,
            bias: (0..geometry.out_ch)
                .map(|_| rng.gen_range(-50_000..50_000))
                .collect(),
            input,
            output,
            multiplier,
        };
        let got = qconv2d(&qx, &conv).map_err(|e| format!("case {case}: {e}"))?;
        let want = oracle_conv(&x, input.zero_point, c, h, w, &conv);
        ensure(got.data() == want.as_slice(), || {
            format!("conv case {case} differs")
        })?;

        let n_in = c * h * w;
        let flat = QuantTensor::new(Shape::new(vec![n_in]).unwrap(), x.clone(), input).unwrap();
        let out_features = rng.gen_range(1..=8);
        let dense = QDense {
            in_features: n_in,
            out_features,
            weights: (0..n_in * out_features)
                .map(|_| rng.gen_range(-127..=127))
                .collect(),
            weight_params,
            bias: (0..out_features)
                .map(|_| rng.gen_range(-50_000..50_000))
                .collect(),
            input,
            output,
            multiplier,
        };
        let got = qdense(&flat, &dense).map_err(|e| format!("case {case}: {e}"))?;
        let want: Vec<i8> = (0..out_features)
            .map(|o| {
                let acc = (0..n_in).fold(dense.bias[o] as i64, |acc, k| {
                    acc + (x[k] as i64 - input.zero_point as i64)
                        * dense.weights[o * n_in + k] as i64
                });
                oracle_requant(acc, multiplier.m0, multiplier.shift, output.zero_point)
            })
            .collect();
        ensure(got.data() == want.as_slice(), || {
            format!("dense case {case} differs")
        })?;
    }
    Ok("100 conv + 100 dense instances bit-exact".into())
}

fn quantization_round_trip(_: &Pair) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases: Vec<(&str, QuantParams, f32, f32)> = vec![
        ("symmetric", qparams_sym(2.5).unwrap(), -2.5, 2.5),
        ("asymmetric", qparams_asym(-0.7, 6.3).unwrap(), -0.7, 6.3),
        ("positive-only", qparams_asym(0.0, 1.0).unwrap(), 0.0, 1.0),
        ("degenerate symmetric", qparams_sym(0.0).unwrap(), 0.0, 0.0),
        (
            "degenerate asymmetric",
            qparams_asym(0.0, 0.0).unwrap(),
            0.0,
            0.0,
        ),
        ("constant range", qparams_asym(5.0, 5.0).unwrap(), 0.0, 5.0),
    ];
    let per_case = 100_000 / cases.len() + 1;
    let mut worst = 0.0f64;
    let mut total = 0;
    for (name, qp, lo, hi) in &cases {
        let values: Vec<f32> = (0..per_case)
            .map(|_| {
                if lo == hi {
                    *lo
                } else {
                    rng.gen_range(*lo..=*hi)
                }
            })
            .collect();
        let x = FloatTensor::new(Shape::new(vec![values.len()]).unwrap(), values).unwrap();
        let back = dequantize(&quantize_tensor(&x, *qp));
        for (a, b) in x.data().iter().zip(back.data()) {
            let err = (*a as f64 - *b as f64).abs();
            let bound = qp.scale as f64 / 2.0;
            ensure(err <= bound, || {
                format!("{name}: |{b} - {a}| = {err:e} > {bound:e}")
            })?;
            worst = worst.max(err / qp.scale as f64);
        }
        total += x.data().len();
    }
    Ok(format!(
        "{total} values, worst error {worst:.4} scale (<= 0.5)"
    ))
}

fn governor_policy(_: &Pair) -> Outcome {
    let p = GovernorPolicy::default();
    let ws = 1u64 << 20;
    let mut rows = 0;
    for charging in [false, true] {
        for high in [false, true] {
            for mem in [false, true] {
                for cores in 1..=8u32 {
                    let s = DeviceState {
                        battery_pct: if high { 90.0 } else { 40.0 },
                        charging,
                        available_memory_bytes: if mem { 3 * ws / 2 } else { 3 * ws / 2 - 1 },
                        total_cores: cores,
                    };
                    let d = decide(&p, &s, ws);
                    let perf = (mem && high) || charging;
                    let (mode, budget) = if perf {
                        (Mode::Performance, 4.min(cores))
                    } else {
                        (Mode::EnergySaving, 1.min(cores))
                    };
                    ensure(d.mode == mode && d.core_budget == budget, || {
                        format!(
                            "row charging={charging} high={high} mem={mem} cores={cores}: {d:?}"
                        )
                    })?;
                }
                rows += 1;
            }
        }
    }
    let boundary = DeviceState {
        battery_pct: 75.0,
        charging: false,
        available_memory_bytes: u64::MAX,
        total_cores: 8,
    };
    ensure(decide(&p, &boundary, ws).mode == Mode::EnergySaving, || {
        "battery 75.0 must not be Performance".into()
    })?;
    Ok(format!(
        "{rows} rows x 8 core counts match, 75.0 boundary strict"
    ))
}

fn parallel_determinism((_, q): &Pair) -> Outcome {
    let inputs = fixture_dataset(50, 99);
    for (i, (x, _)) in inputs.iter().enumerate() {
        let reference: Vec<u32> = parallel_forward(q, x, 1)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        for budget in 2..=8 {
            let y: Vec<u32> = parallel_forward(q, x, budget)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            ensure(y == reference, || {
                format!("input {i} differs at budget {budget}")
            })?;
        }
    }
    let policy = GovernorPolicy::default();
    let states = [(90.0, false), (30.0, false), (10.0, true), (100.0, true)];
    for (i, (x, _)) in inputs.iter().take(10).enumerate() {
        let results: Vec<_> = states
            .iter()
            .map(|&(battery_pct, charging)| {
                let s = DeviceState {
                    battery_pct,
                    charging,
                    available_memory_bytes: 1 << 30,
                    total_cores: 8,
                };
                screen(q, x, &s, &policy, &Thresholds::default()).unwrap()
            })
            .collect();
        ensure(
            results
                .iter()
                .all(|r| r.class_probabilities == results[0].class_probabilities),
            || format!("screen probabilities depend on device state for input {i}"),
        )?;
        ensure(
            results[1].mode_used == Mode::EnergySaving && results[0].core_budget_used == 4,
            || "governor did not vary the budget".into(),
        )?;
    }
    Ok("50 inputs x budgets 1..8 bit-identical; screen invariant to device state".into())
}

fn latency((g, q): &Pair) -> Outcome {
    let (x, _) = &fixture_dataset(1, 5)[0];
    let reps = 30;
    let float = time_runs(reps, || g.forward(x).map(drop)).map_err(|e| e.to_string())?;
    let quant1 = measure_latency(q, x, 1, reps).map_err(|e| e.to_string())?;
    let quant4 = measure_latency(q, x, 4, reps).map_err(|e| e.to_string())?;
    ensure(quant4.median_s < 1.0, || {
        format!("budget-4 median {:.4} s", quant4.median_s)
    })?;
    ensure(quant1.median_s <= 1.25 * float.median_s, || {
        format!(
            "quant median {:.3} ms > 1.25 x float {:.3} ms",
            quant1.median_s * 1e3,
            float.median_s * 1e3
        )
    })?;
    Ok(format!(
        "float {:.3} ms, quant {:.3} ms (1 core) / {:.3} ms (4 cores), float/quant {:.2}",
        float.median_s * 1e3,
        quant1.median_s * 1e3,
        quant4.median_s * 1e3,
        float.median_s / quant1.median_s
    ))
}

fn battery_extension(_: &Pair) -> Outcome {
    let defaults = simulate(&SimConfig::default()).map_err(|e| e.to_string())?;
    ensure(defaults.extension_ratio >= 0.05, || {
        format!("extension {}", defaults.extension_ratio)
    })?;
    let path = common::config_path("reference_device.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg: SimConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let reference = simulate(&cfg).map_err(|e| e.to_string())?;
    ensure((1000..=1500).contains(&reference.additional_scans), || {
        format!("reference device adds {} scans", reference.additional_scans)
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..50 {
        let perf = rng.gen_range(1..=8);
        let cfg = SimConfig {
            battery: Battery::full(rng.gen_range(0.0..20_000.0)),
            energy_model: EnergyModel {
                p_base: rng.gen_range(0.05..2.0),
                p_core: rng.gen_range(0.05..2.0),
                parallel_fraction: rng.gen_range(0.0..=1.0),
                t1: rng.gen_range(0.05..2.0),
            },
            policy: GovernorPolicy {
                battery_threshold_pct: rng.gen_range(0.0..=100.0),
                perf_core_cap: perf,
                saving_core_cap: rng.gen_range(1..=perf),
                memory_headroom_factor: 1.5,
            },
            device: DeviceTemplate {
                available_memory_bytes: 1 << 30,
                total_cores: rng.gen_range(1..=16),
            },
            working_set_bytes: 1 << 20,
        };
        let r = simulate(&cfg).map_err(|e| e.to_string())?;
        let (a, b) = (r.scans.always_performance, r.scans.always_saving);
        ensure(a.min(b) <= r.scans.eqo && r.scans.eqo <= a.max(b), || {
            format!("config {i}: {:?}", r.scans)
        })?;
    }
    Ok(format!(
        "defaults +{} scans ({:.1}%), reference device +{} scans, mixture bound on 50 configs",
        defaults.additional_scans,
        defaults.extension_ratio * 100.0,
        reference.additional_scans
    ))
}

fn corruption_sweep(
    bytes: &[u8],
    decode: impl Fn(&[u8]) -> bool,
    skip: usize,
) -> Result<usize, String> {
    let mut buf = bytes.to_vec();
    for i in skip..bytes.len() {
        buf[i] ^= 0xA5;
        if !decode(&buf) {
            return Err(format!("flip at byte {i} not reported as CRC mismatch"));
        }
        buf[i] = bytes[i];
    }
    Ok(bytes.len() - skip)
}

fn persistence((g, q): &Pair) -> Outcome {
    use aicom::Error;
    let p = std::path::Path::new("<memory>");
    let mut swept = 0;
    for m in [Model::Float(g.clone()), Model::Quant(q.clone())] {
        let bytes = encode_model(&m);
        let back = decode_model(&bytes, p).map_err(|e| e.to_string())?;
        ensure(back == m && encode_model(&back) == bytes, || {
            format!("{} model round trip", m.kind())
        })?;
        // magic and version have their own errors
        swept += corruption_sweep(
            &bytes,
            |b| matches!(decode_model(b, p), Err(Error::CrcMismatch { .. })),
            8,
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shape = Shape::new(vec![3, 16, 16]).unwrap();
    let floats = FloatTensor::new(
        shape.clone(),
        (0..768).map(|_| rng.gen_range(-1e6f32..1e6)).collect(),
    )
    .unwrap();
    let ints = StoredTensor::I8 {
        shape,
        data: (0..768).map(|_| rng.gen()).collect(),
    };
    for t in [StoredTensor::F32(floats), ints] {
        let bytes = encode_tensor(&t);
        let back = decode_tensor(&bytes, p).map_err(|e| e.to_string())?;
        ensure(back == t && encode_tensor(&back) == bytes, || {
            "tensor round trip".into()
        })?;
        swept += corruption_sweep(
            &bytes,
            |b| matches!(decode_tensor(b, p), Err(Error::CrcMismatch { .. })),
            4,
        )?;
    }
    Ok(format!(
        "round trips bit-exact; {swept} single-byte corruptions all caught"
    ))
}

fn main() {
    let pair = common::fixture_pair();
    let criteria: [Criterion; 9] = [
        ("size reduction", size_reduction, 1),
        ("accuracy preservation", accuracy_preservation, 30),
        ("integer-kernel correctness", kernel_correctness, 60),
        ("quantization round-trip", quantization_round_trip, 10),
        ("governor policy", governor_policy, 1),
        ("parallel determinism", parallel_determinism, 60),
        ("latency", latency, 60),
        ("battery extension", battery_extension, 10),
        ("persistence", persistence, 30),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&pair)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(*limit) => Err(format!(
                "{detail}; took {:.2} s, limit {limit} s",
                elapsed.as_secs_f64()
            )),
            other => other,
        };
        match outcome {
            Ok(detail) => println!(
                "PASS {} {name}: {detail} [{:.2} s]",
                i + 1,
                elapsed.as_secs_f64()
            ),
            Err(reason) => {
                failed += 1;
                println!(
                    "FAIL {} {name}: {reason} [{:.2} s]",
                    i + 1,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
