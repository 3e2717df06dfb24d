//! Float model graph: the reference path that quantization is measured against.

mod fixture;
mod kernels;

pub use fixture::{fixture_dataset, fixture_model, FIXTURE_LABELS};
pub(crate) use kernels::pool_windows as kernels_pool_windows;
pub use kernels::{conv2d_f, dense_f, flatten_f, maxpool_f, relu_f, softmax_f};

use crate::error::{Error, Result};
use crate::tensor::{FloatTensor, Shape};

/// Spatial parameters of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn weight_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kh * self.kw
    }

    /// Multiply-accumulates feeding one output element.
    pub fn macs_per_output(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub(crate) fn output_shape(&self, input: &Shape) -> std::result::Result<Shape, String> {
        if self.stride == 0 {
            return Err("stride must be at least 1".into());
        }
        let [c, h, w] = chw(input)?;
        if c != self.in_ch {
            return Err(format!("expects {} input channels, got {c}", self.in_ch));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kh || pw < self.kw {
            return Err(format!(
                "kernel {}x{} larger than padded input {ph}x{pw}",
                self.kh, self.kw
            ));
        }
        let oh = (ph - self.kh) / self.stride + 1;
        let ow = (pw - self.kw) / self.stride + 1;
        Shape::new(vec![self.out_ch, oh, ow]).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2d {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl Pool2d {
    pub(crate) fn output_shape(&self, input: &Shape) -> std::result::Result<Shape, String> {
        if self.stride == 0 || self.kh == 0 || self.kw == 0 {
            return Err("pool window and stride must be at least 1".into());
        }
        let [c, h, w] = chw(input)?;
        if h < self.kh || w < self.kw {
            return Err(format!(
                "pool window {}x{} larger than input {h}x{w}",
                self.kh, self.kw
            ));
        }
        Shape::new(vec![
            c,
            (h - self.kh) / self.stride + 1,
            (w - self.kw) / self.stride + 1,
        ])
        .map_err(|e| e.to_string())
    }
}

fn chw(shape: &Shape) -> std::result::Result<[usize; 3], String> {
    match *shape.dims() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(format!("expects a [C,H,W] input, got {shape}")),
    }
}

pub(crate) fn dense_output_shape(
    in_features: usize,
    out_features: usize,
    input: &Shape,
) -> std::result::Result<Shape, String> {
    if input.rank() != 1 || input.element_count() != in_features {
        return Err(format!(
            "expects a flat input of {in_features} features, got {input}"
        ));
    }
    Shape::new(vec![out_features]).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub geometry: ConvGeometry,
    /// `[out_ch, in_ch, kh, kw]`
    pub weights: FloatTensor,
    /// `[out_ch]`
    pub bias: FloatTensor,
}

impl Conv2d {
    pub fn new(geometry: ConvGeometry, weights: FloatTensor, bias: FloatTensor) -> Result<Self> {
        let g = geometry;
        let bad = |reason: String| Error::InvalidArgument(format!("conv2d: {reason}"));
        if g.stride == 0 || g.in_ch == 0 || g.out_ch == 0 || g.kh == 0 || g.kw == 0 {
            return Err(bad("channels, kernel and stride must be at least 1".into()));
        }
        if weights.shape().dims() != [g.out_ch, g.in_ch, g.kh, g.kw] {
            return Err(bad(format!(
                "weights shape {} != [{},{},{},{}]",
                weights.shape(),
                g.out_ch,
                g.in_ch,
                g.kh,
                g.kw
            )));
        }
        if bias.shape().dims() != [g.out_ch] {
            return Err(bad(format!(
                "bias shape {} != [{}]",
                bias.shape(),
                g.out_ch
            )));
        }
        Ok(Conv2d {
            geometry,
            weights,
            bias,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out_features, in_features]`
    pub weights: FloatTensor,
    /// `[out_features]`
    pub bias: FloatTensor,
}

impl Dense {
    pub fn new(weights: FloatTensor, bias: FloatTensor) -> Result<Self> {
        let (out_features, in_features) = match *weights.shape().dims() {
            [o, i] => (o, i),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "dense: weights must be [out, in], got {}",
                    weights.shape()
                )))
            }
        };
        if bias.shape().dims() != [out_features] {
            return Err(Error::InvalidArgument(format!(
                "dense: bias shape {} != [{out_features}]",
                bias.shape()
            )));
        }
        Ok(Dense {
            in_features,
            out_features,
            weights,
            bias,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    MaxPool2d(Pool2d),
    Flatten,
    Dense(Dense),
    Softmax,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "Conv2D",
            Layer::Relu => "ReLU",
            Layer::MaxPool2d(_) => "MaxPool2D",
            Layer::Flatten => "Flatten",
            Layer::Dense(_) => "Dense",
            Layer::Softmax => "Softmax",
        }
    }

    fn output_shape(&self, input: &Shape) -> std::result::Result<Shape, String> {
        match self {
            Layer::Conv2d(c) => c.geometry.output_shape(input),
            Layer::MaxPool2d(p) => p.output_shape(input),
            Layer::Dense(d) => dense_output_shape(d.in_features, d.out_features, input),
            Layer::Flatten => Shape::new(vec![input.element_count()]).map_err(|e| e.to_string()),
            Layer::Relu | Layer::Softmax => Ok(input.clone()),
        }
    }

    pub fn apply(&self, x: &FloatTensor) -> Result<FloatTensor> {
        match self {
            Layer::Conv2d(c) => conv2d_f(x, c),
            Layer::Relu => Ok(relu_f(x)),
            Layer::MaxPool2d(p) => maxpool_f(x, p),
            Layer::Flatten => Ok(flatten_f(x)),
            Layer::Dense(d) => dense_f(x, d),
            Layer::Softmax => Ok(softmax_f(x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: Shape,
    layers: Vec<Layer>,
    class_labels: Vec<String>,
}

impl ModelGraph {
    pub fn new(input_shape: Shape, layers: Vec<Layer>, class_labels: Vec<String>) -> Result<Self> {
        let g = ModelGraph {
            input_shape,
            layers,
            class_labels,
        };
        let trace = g.validate()?;
        let out = trace.last().unwrap_or(&g.input_shape);
        if !g.class_labels.is_empty() && g.class_labels.len() != out.element_count() {
            return Err(Error::InvalidArgument(format!(
                "{} class labels for an output of {} elements",
                g.class_labels.len(),
                out.element_count()
            )));
        }
        Ok(g)
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn ends_in_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Softmax))
    }

    /// Shape after each layer; fails on the first incompatible layer.
    pub fn validate(&self) -> Result<Vec<Shape>> {
        let mut current = self.input_shape.clone();
        let mut trace = Vec::with_capacity(self.layers.len());
        let count = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != count {
                return Err(Error::SoftmaxNotLast { layer: i });
            }
            current = layer
                .output_shape(&current)
                .map_err(|reason| Error::IncompatibleLayer { layer: i, reason })?;
            trace.push(current.clone());
        }
        Ok(trace)
    }

    fn check_input(&self, x: &FloatTensor) -> Result<()> {
        if x.shape() != &self.input_shape {
            return Err(Error::InputShape {
                expected: self.input_shape.dims().to_vec(),
                actual: x.shape().dims().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &FloatTensor) -> Result<FloatTensor> {
        self.check_input(x)?;
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer.apply(&current).map_err(|e| at_layer(e, i))?;
        }
        Ok(current)
    }

    /// Every activation, starting with the input itself.
    pub fn forward_sites(&self, x: &FloatTensor) -> Result<Vec<FloatTensor>> {
        self.check_input(x)?;
        let mut sites = Vec::with_capacity(self.layers.len() + 1);
        sites.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .apply(sites.last().expect("input site"))
                .map_err(|e| at_layer(e, i))?;
            sites.push(next);
        }
        Ok(sites)
    }

    /// Float parameter count (weights and biases).
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weights.data().len() + c.bias.data().len(),
                Layer::Dense(d) => d.weights.data().len() + d.bias.data().len(),
                _ => 0,
            })
            .sum()
    }
}

pub(crate) fn at_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::IncompatibleLayer { reason, .. } => Error::IncompatibleLayer { layer, reason },
        other => other,
    }
}

pub fn forward_f(g: &ModelGraph, x: &FloatTensor) -> Result<FloatTensor> {
    g.forward(x)
}
