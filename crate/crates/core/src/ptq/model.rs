use super::calibrate::{site_count, CalibrationStats};
use super::kernels::{
    qconv2d_with, qdense_with, qflatten, qmaxpool, qrelu, Sequential, UnitExecutor, MAX_MACS,
    MAX_MAC_MAGNITUDE,
};
use super::params::{
    dequantize, fxp_from_real, qparams_asym, qparams_sym, quantize_tensor, round_half_away,
    FixedPointMultiplier,
};
use crate::error::{Error, Result};
use crate::nnf::{
    at_layer, dense_output_shape, softmax_f, ConvGeometry, Layer, ModelGraph, Pool2d,
};
use crate::tensor::{FloatTensor, QuantParams, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct QConv2d {
    pub geometry: ConvGeometry,
    /// `[out_ch, in_ch, kh, kw]`, symmetric per-tensor.
    pub weights: Vec<i8>,
    pub weight_params: QuantParams,
    pub bias: Vec<i32>,
    pub input: QuantParams,
    pub output: QuantParams,
    pub multiplier: FixedPointMultiplier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QDense {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out_features, in_features]`, symmetric per-tensor.
    pub weights: Vec<i8>,
    pub weight_params: QuantParams,
    pub bias: Vec<i32>,
    pub input: QuantParams,
    pub output: QuantParams,
    pub multiplier: FixedPointMultiplier,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantLayer {
    Conv2d(QConv2d),
    Relu,
    MaxPool2d(Pool2d),
    Flatten,
    Dense(QDense),
    Softmax,
}

impl QuantLayer {
    pub fn name(&self) -> &'static str {
        match self {
            QuantLayer::Conv2d(_) => "Conv2D",
            QuantLayer::Relu => "ReLU",
            QuantLayer::MaxPool2d(_) => "MaxPool2D",
            QuantLayer::Flatten => "Flatten",
            QuantLayer::Dense(_) => "Dense",
            QuantLayer::Softmax => "Softmax",
        }
    }
}

/// Integer form of a [`ModelGraph`]: int8 weights, int32 biases, one set of
/// quantization parameters per activation site.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantModel {
    input_shape: Shape,
    layers: Vec<QuantLayer>,
    sites: Vec<QuantParams>,
    class_labels: Vec<String>,
}

fn bias_headroom(macs: usize) -> i64 {
    i32::MAX as i64 - macs as i64 * MAX_MAC_MAGNITUDE
}

impl QuantModel {
    /// Checks shape chaining, site wiring and the accumulator bound.
    pub fn new(
        input_shape: Shape,
        layers: Vec<QuantLayer>,
        sites: Vec<QuantParams>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        let m = QuantModel {
            input_shape,
            layers,
            sites,
            class_labels,
        };
        let trace = m.validate()?;
        let expected_sites = m.layers.len() + 1 - usize::from(m.ends_in_softmax());
        if m.sites.len() != expected_sites {
            return Err(Error::InvalidArgument(format!(
                "{} site parameters for {expected_sites} sites",
                m.sites.len()
            )));
        }
        for (i, layer) in m.layers.iter().enumerate() {
            let wiring = |input: QuantParams, output: QuantParams| -> Result<()> {
                if input != m.sites[i] || output != m.sites[i + 1] {
                    return Err(Error::QParamsMismatch(format!(
                        "layer {i} parameters disagree with its sites"
                    )));
                }
                Ok(())
            };
            match layer {
                QuantLayer::Conv2d(c) => {
                    wiring(c.input, c.output)?;
                    let macs = c.geometry.macs_per_output();
                    check_accumulator(i, macs, &c.bias)?;
                    if c.weights.len() != c.geometry.weight_count()
                        || c.bias.len() != c.geometry.out_ch
                    {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: payload size mismatch"
                        )));
                    }
                }
                QuantLayer::Dense(d) => {
                    wiring(d.input, d.output)?;
                    check_accumulator(i, d.in_features, &d.bias)?;
                    if d.weights.len() != d.in_features * d.out_features
                        || d.bias.len() != d.out_features
                    {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: payload size mismatch"
                        )));
                    }
                }
                QuantLayer::Relu | QuantLayer::MaxPool2d(_) | QuantLayer::Flatten => {
                    if m.sites[i + 1] != m.sites[i] {
                        return Err(Error::QParamsMismatch(format!(
                            "layer {i} ({}) must share its input site parameters",
                            layer.name()
                        )));
                    }
                }
                QuantLayer::Softmax => {}
            }
        }
        let out = trace.last().unwrap_or(&m.input_shape);
        if !m.class_labels.is_empty() && m.class_labels.len() != out.element_count() {
            return Err(Error::InvalidArgument(format!(
                "{} class labels for an output of {} elements",
                m.class_labels.len(),
                out.element_count()
            )));
        }
        Ok(m)
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    /// Site 0 is the model input; site `i + 1` is the output of layer `i`.
    pub fn sites(&self) -> &[QuantParams] {
        &self.sites
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn ends_in_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(QuantLayer::Softmax))
    }

    pub fn validate(&self) -> Result<Vec<Shape>> {
        let mut current = self.input_shape.clone();
        let mut trace = Vec::with_capacity(self.layers.len());
        let count = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, QuantLayer::Softmax) && i + 1 != count {
                return Err(Error::SoftmaxNotLast { layer: i });
            }
            let next = match layer {
                QuantLayer::Conv2d(c) => c.geometry.output_shape(&current),
                QuantLayer::MaxPool2d(p) => p.output_shape(&current),
                QuantLayer::Dense(d) => dense_output_shape(d.in_features, d.out_features, &current),
                QuantLayer::Flatten => {
                    Shape::new(vec![current.element_count()]).map_err(|e| e.to_string())
                }
                QuantLayer::Relu | QuantLayer::Softmax => Ok(current.clone()),
            };
            current = next.map_err(|reason| Error::IncompatibleLayer { layer: i, reason })?;
            trace.push(current.clone());
        }
        Ok(trace)
    }

    /// Bytes of int8 weights plus int32 biases.
    pub fn parameter_bytes(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                QuantLayer::Conv2d(c) => c.weights.len() + 4 * c.bias.len(),
                QuantLayer::Dense(d) => d.weights.len() + 4 * d.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Element count of the largest activation, including the input.
    pub fn largest_activation(&self) -> usize {
        let trace = self.validate().expect("model validated at construction");
        trace
            .iter()
            .map(Shape::element_count)
            .chain([self.input_shape.element_count()])
            .max()
            .unwrap_or(0)
    }

    /// Quantizes the input, runs the integer layers with `exec` splitting
    /// conv/dense output units, then dequantizes and applies a float softmax
    /// when the model ends in one.
    pub fn forward_with(&self, x: &FloatTensor, exec: &dyn UnitExecutor) -> Result<FloatTensor> {
        if x.shape() != &self.input_shape {
            return Err(Error::InputShape {
                expected: self.input_shape.dims().to_vec(),
                actual: x.shape().dims().to_vec(),
            });
        }
        let mut q = quantize_tensor(x, self.sites[0]);
        for (i, layer) in self.layers.iter().enumerate() {
            q = match layer {
                QuantLayer::Conv2d(c) => qconv2d_with(&q, c, exec).map_err(|e| at_layer(e, i))?,
                QuantLayer::Dense(d) => qdense_with(&q, d, exec).map_err(|e| at_layer(e, i))?,
                QuantLayer::Relu => qrelu(&q),
                QuantLayer::MaxPool2d(p) => qmaxpool(&q, p).map_err(|e| at_layer(e, i))?,
                QuantLayer::Flatten => qflatten(q),
                QuantLayer::Softmax => return Ok(softmax_f(&dequantize(&q))),
            };
        }
        Ok(dequantize(&q))
    }

    pub fn forward(&self, x: &FloatTensor) -> Result<FloatTensor> {
        self.forward_with(x, &Sequential)
    }
}

fn check_accumulator(layer: usize, macs: usize, bias: &[i32]) -> Result<()> {
    if macs > MAX_MACS {
        return Err(Error::AccumulatorBound { layer, macs });
    }
    let headroom = bias_headroom(macs);
    if let Some(&b) = bias.iter().find(|&&b| (b as i64).abs() > headroom) {
        return Err(Error::BiasOverflow {
            layer,
            value: b as f64,
        });
    }
    Ok(())
}

pub fn forward_q(m: &QuantModel, x: &FloatTensor) -> Result<FloatTensor> {
    m.forward(x)
}

fn absmax(t: &FloatTensor) -> f32 {
    t.data().iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

struct Quantized {
    weights: Vec<i8>,
    weight_params: QuantParams,
    bias: Vec<i32>,
    multiplier: FixedPointMultiplier,
}

fn quantize_params(
    layer: usize,
    macs: usize,
    weights: &FloatTensor,
    bias: &FloatTensor,
    input: QuantParams,
    output: QuantParams,
) -> Result<Quantized> {
    if macs > MAX_MACS {
        return Err(Error::AccumulatorBound { layer, macs });
    }
    let weight_params = qparams_sym(absmax(weights))?;
    let q_weights = quantize_tensor(weights, weight_params).data().to_vec();
    let acc_scale = input.scale as f64 * weight_params.scale as f64;
    let headroom = bias_headroom(macs) as f64;
    let q_bias = bias
        .data()
        .iter()
        .map(|&b| {
            let v = round_half_away(b as f64 / acc_scale);
            if v.abs() > headroom {
                Err(Error::BiasOverflow { layer, value: v })
            } else {
                Ok(v as i32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let multiplier = fxp_from_real(acc_scale / output.scale as f64)?;
    Ok(Quantized {
        weights: q_weights,
        weight_params,
        bias: q_bias,
        multiplier,
    })
}

/// Converts a float graph to integer form using calibrated site ranges.
pub fn quantize_model(g: &ModelGraph, stats: &CalibrationStats) -> Result<QuantModel> {
    g.validate()?;
    let n_sites = site_count(g);
    if let Some(site) = (0..n_sites).find(|&s| stats.sites.get(s).is_none_or(|st| st.count == 0)) {
        return Err(Error::MissingSiteStats { site });
    }
    let site_range = |s: usize| qparams_asym(stats.sites[s].min as f64, stats.sites[s].max as f64);

    let mut sites = Vec::with_capacity(n_sites);
    sites.push(site_range(0)?);
    let mut layers = Vec::with_capacity(g.layers().len());
    for (i, layer) in g.layers().iter().enumerate() {
        let input = sites[i];
        let q = match layer {
            Layer::Conv2d(c) => {
                let output = site_range(i + 1)?;
                let p = quantize_params(
                    i,
                    c.geometry.macs_per_output(),
                    &c.weights,
                    &c.bias,
                    input,
                    output,
                )?;
                sites.push(output);
                QuantLayer::Conv2d(QConv2d {
                    geometry: c.geometry,
                    weights: p.weights,
                    weight_params: p.weight_params,
                    bias: p.bias,
                    input,
                    output,
                    multiplier: p.multiplier,
                })
            }
            Layer::Dense(d) => {
                let output = site_range(i + 1)?;
                let p = quantize_params(i, d.in_features, &d.weights, &d.bias, input, output)?;
                sites.push(output);
                QuantLayer::Dense(QDense {
                    in_features: d.in_features,
                    out_features: d.out_features,
                    weights: p.weights,
                    weight_params: p.weight_params,
                    bias: p.bias,
                    input,
                    output,
                    multiplier: p.multiplier,
                })
            }
            Layer::Relu => {
                sites.push(input);
                QuantLayer::Relu
            }
            Layer::MaxPool2d(p) => {
                sites.push(input);
                QuantLayer::MaxPool2d(*p)
            }
            Layer::Flatten => {
                sites.push(input);
                QuantLayer::Flatten
            }
            Layer::Softmax => QuantLayer::Softmax,
        };
        layers.push(q);
    }
    QuantModel::new(
        g.input_shape().clone(),
        layers,
        sites,
        g.class_labels().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnf::{conv2d_f, fixture_dataset, fixture_model, Conv2d, Dense};
    use crate::ptq::calibrate::{calibrate, SiteStats};
    use crate::ptq::kernels::{qconv2d, qdense, qmaxpool, qrelu};
    use crate::ptq::params::dequantize_value;
    use crate::tensor::QuantTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    fn t(d: &[usize], v: Vec<f32>) -> FloatTensor {
        FloatTensor::new(shape(d), v).unwrap()
    }

    fn one_by_one(weights: Vec<f32>) -> ModelGraph {
        let out_ch = weights.len();
        let g = ConvGeometry {
            in_ch: 1,
            out_ch,
            kh: 1,
            kw: 1,
            stride: 1,
            padding: 0,
        };
        let conv = Conv2d::new(
            g,
            t(&[out_ch, 1, 1, 1], weights),
            t(&[out_ch], vec![0.0; out_ch]),
        )
        .unwrap();
        ModelGraph::new(shape(&[1, 1, 1]), vec![Layer::Conv2d(conv)], vec![]).unwrap()
    }

    fn stats(ranges: &[(f32, f32)]) -> CalibrationStats {
        CalibrationStats {
            sites: ranges
                .iter()
                .map(|&(min, max)| SiteStats { min, max, count: 1 })
                .collect(),
        }
    }

    #[test]
    fn hand_checked_one_by_one_conv() {
        // second channel pins the weight absmax at 1.27 so s_w = 0.01
        let g = one_by_one(vec![0.5, 1.27]);
        let m = quantize_model(&g, &stats(&[(-12.8, 12.7), (-12.8, 12.7)])).unwrap();
        let QuantLayer::Conv2d(c) = &m.layers()[0] else {
            panic!("expected conv")
        };
        assert_eq!(c.input, QuantParams::new(0.1, 0).unwrap());
        assert_eq!(c.output, QuantParams::new(0.1, 0).unwrap());
        assert_eq!(c.weight_params.scale, 0.01);
        assert_eq!(c.weights, vec![50, 127]);
        assert!((c.multiplier.to_real() - 0.01).abs() < 1e-9);

        let x = t(&[1, 1, 1], vec![2.0]);
        let qx = quantize_tensor(&x, c.input);
        assert_eq!(qx.data(), &[20]);
        let qy = qconv2d(&qx, c).unwrap();
        assert_eq!(qy.data()[0], 10);
        assert_eq!(dequantize_value(qy.data()[0], c.output), 1.0);
        let Layer::Conv2d(fc) = &g.layers()[0] else {
            unreachable!()
        };
        assert_eq!(conv2d_f(&x, fc).unwrap().data()[0], 1.0);
    }

    #[test]
    fn all_zero_weights() {
        let g = one_by_one(vec![0.0, 0.0]);
        let m = quantize_model(&g, &stats(&[(-1.0, 1.0), (-1.0, 1.0)])).unwrap();
        let QuantLayer::Conv2d(c) = &m.layers()[0] else {
            panic!()
        };
        assert_eq!(c.weights, vec![0, 0]);
        assert_eq!(c.weight_params.scale, 1.0);
    }

    #[test]
    fn zero_input_gives_output_zero_point() {
        let g = one_by_one(vec![0.3, -0.7]);
        let m = quantize_model(&g, &stats(&[(-1.0, 2.0), (-0.5, 3.0)])).unwrap();
        let QuantLayer::Conv2d(c) = &m.layers()[0] else {
            panic!()
        };
        let qx =
            QuantTensor::new(shape(&[1, 1, 1]), vec![c.input.zero_point as i8], c.input).unwrap();
        let qy = qconv2d(&qx, c).unwrap();
        assert!(qy.data().iter().all(|&q| q as i32 == c.output.zero_point));
    }

    #[test]
    fn missing_site_stats() {
        let g = one_by_one(vec![1.0]);
        assert!(matches!(
            quantize_model(&g, &stats(&[(0.0, 1.0)])),
            Err(Error::MissingSiteStats { site: 1 })
        ));
        let mut s = stats(&[(0.0, 1.0), (0.0, 1.0)]);
        s.sites[0].count = 0;
        assert!(matches!(
            quantize_model(&g, &s),
            Err(Error::MissingSiteStats { site: 0 })
        ));
    }

    #[test]
    fn accumulator_bound_rejected() {
        let n = MAX_MACS + 1;
        let dense = Dense::new(t(&[1, n], vec![0.1; n]), t(&[1], vec![0.0])).unwrap();
        let g = ModelGraph::new(shape(&[n]), vec![Layer::Dense(dense)], vec![]).unwrap();
        let err = quantize_model(&g, &stats(&[(0.0, 1.0), (0.0, 1.0)])).unwrap_err();
        assert!(matches!(err, Error::AccumulatorBound { layer: 0, .. }));
    }

    #[test]
    fn bias_overflow_rejected() {
        let dense = Dense::new(t(&[1, 1], vec![1e-3]), t(&[1], vec![1e6])).unwrap();
        let g = ModelGraph::new(shape(&[1]), vec![Layer::Dense(dense)], vec![]).unwrap();
        let err = quantize_model(&g, &stats(&[(0.0, 1e-3), (0.0, 1e6)])).unwrap_err();
        assert!(matches!(err, Error::BiasOverflow { layer: 0, .. }));
    }

    #[test]
    fn qparams_mismatch_detected() {
        let g = one_by_one(vec![1.0]);
        let m = quantize_model(&g, &stats(&[(0.0, 1.0), (0.0, 1.0)])).unwrap();
        let QuantLayer::Conv2d(c) = &m.layers()[0] else {
            panic!()
        };
        let other = QuantParams::new(0.5, 3).unwrap();
        let qx = QuantTensor::new(shape(&[1, 1, 1]), vec![0], other).unwrap();
        assert!(matches!(qconv2d(&qx, c), Err(Error::QParamsMismatch(_))));
    }

    #[test]
    fn relu_and_pool_examples() {
        let qp = QuantParams::new(0.1, -10).unwrap();
        let q = QuantTensor::new(shape(&[2]), vec![-20, 5], qp).unwrap();
        assert_eq!(qrelu(&q).data(), &[-10, 5]);
        let q = QuantTensor::new(shape(&[1, 2, 2]), vec![1, 2, 3, 4], qp).unwrap();
        let pooled = qmaxpool(
            &q,
            &Pool2d {
                kh: 2,
                kw: 2,
                stride: 2,
            },
        )
        .unwrap();
        assert_eq!(pooled.data(), &[4]);
        assert_eq!(pooled.qparams(), qp);
    }

    #[test]
    fn relu_exact_on_grid() {
        let qp = QuantParams::new(0.05, 17).unwrap();
        let all: Vec<i8> = (-128..=127).collect();
        let q = QuantTensor::new(shape(&[256]), all, qp).unwrap();
        let out = dequantize(&qrelu(&q));
        let reference = dequantize(&q);
        for (a, b) in out.data().iter().zip(reference.data()) {
            assert_eq!(*a, b.max(0.0));
        }
    }

    #[test]
    fn dense_hand_arithmetic() {
        let qp_in = QuantParams::new(0.5, 3).unwrap();
        let layer = QDense {
            in_features: 2,
            out_features: 1,
            weights: vec![10, -4],
            weight_params: QuantParams::new(0.1, 0).unwrap(),
            bias: vec![7],
            input: qp_in,
            output: QuantParams::new(1.0, -2).unwrap(),
            multiplier: fxp_from_real(0.05).unwrap(),
        };
        let qx = QuantTensor::new(shape(&[2]), vec![13, -1], qp_in).unwrap();
        // acc = (13-3)*10 + (-1-3)*(-4) + 7 = 123; 123 * 0.05 = 6.15 -> 6; +(-2)
        assert_eq!(qdense(&qx, &layer).unwrap().data(), &[4]);
    }

    #[test]
    fn fixture_pipeline() {
        let g = fixture_model();
        let samples: Vec<_> = fixture_dataset(32, 1).into_iter().map(|(x, _)| x).collect();
        let m = quantize_model(&g, &calibrate(&g, &samples).unwrap()).unwrap();
        assert_eq!(m.validate().unwrap(), g.validate().unwrap());
        assert_eq!(m.sites().len(), 9);
        // ReLU/MaxPool/Flatten share their input site
        for i in [1, 2, 4, 5, 6] {
            assert_eq!(m.sites()[i + 1], m.sites()[i]);
        }
        let (x, _) = &fixture_dataset(1, 5)[0];
        let a = m.forward(x).unwrap();
        let b = m.forward(x).unwrap();
        assert_eq!(a, b);
        let sum: f32 = a.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fixture_argmax_agreement() {
        let g = fixture_model();
        let calib: Vec<_> = fixture_dataset(32, 1).into_iter().map(|(x, _)| x).collect();
        let m = quantize_model(&g, &calibrate(&g, &calib).unwrap()).unwrap();
        let data = fixture_dataset(500, 42);
        let agree = data
            .iter()
            .filter(|(x, _)| g.forward(x).unwrap().argmax() == m.forward(x).unwrap().argmax())
            .count();
        assert!(agree >= 495, "agreement {agree}/500");
    }

    #[test]
    fn random_small_models_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let in_ch = rng.gen_range(1..=3);
            let out_ch = rng.gen_range(1..=4);
            let geom = ConvGeometry {
                in_ch,
                out_ch,
                kh: 3,
                kw: 3,
                stride: 1,
                padding: 1,
            };
            let w: Vec<f32> = (0..geom.weight_count())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let b: Vec<f32> = (0..out_ch).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let conv = Conv2d::new(geom, t(&[out_ch, in_ch, 3, 3], w), t(&[out_ch], b)).unwrap();
            let g = ModelGraph::new(
                shape(&[in_ch, 5, 5]),
                vec![Layer::Conv2d(conv), Layer::Relu, Layer::Flatten],
                vec![],
            )
            .unwrap();
            let samples: Vec<_> = (0..4)
                .map(|_| {
                    t(
                        &[in_ch, 5, 5],
                        (0..in_ch * 25).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    )
                })
                .collect();
            let m = quantize_model(&g, &calibrate(&g, &samples).unwrap()).unwrap();
            let y = m.forward(&samples[0]).unwrap();
            let yf = g.forward(&samples[0]).unwrap();
            let s = m.sites().last().unwrap().scale;
            // loose sanity bound: a few output steps plus weight rounding
            for (a, b) in y.data().iter().zip(yf.data()) {
                assert!((a - b).abs() < 0.1 + 4.0 * s, "{a} vs {b}");
            }
        }
    }
}
