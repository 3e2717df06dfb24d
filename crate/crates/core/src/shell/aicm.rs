//! `AICM` model files.
//!
//! ```text
//! "AICM" | u32 version=1 | u8 kind (0 float, 1 quant)
//! u32 input rank | u32 dims...
//! u32 label count | (u32 len, utf8)...
//! quant only: u32 site count | (f32 scale, i32 zero_point)...
//! u32 layer count | layers...
//! u32 CRC32 of all preceding bytes
//! ```
//!
//! Layers start with a u8 tag: 1 Conv2D, 2 ReLU, 3 MaxPool2D, 4 Flatten,
//! 5 Dense, 6 Softmax. Conv2D carries u32 in_ch, out_ch, kh, kw, stride,
//! padding; MaxPool2D u32 kh, kw, stride; Dense u32 in, out. Float weights
//! and biases are f32. Quantized conv/dense payloads are the weight params
//! (f32, i32), i8 weights, i32 biases, then the multiplier as (i32 m0,
//! u32 shift); their input/output params come from the site table.

use std::path::Path;

use super::codec::{check_crc, read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::nnf::{Conv2d, ConvGeometry, Dense, Layer, ModelGraph, Pool2d};
use crate::ptq::{FixedPointMultiplier, QConv2d, QDense, QuantLayer, QuantModel};
use crate::tensor::{FloatTensor, QuantParams, Shape};

pub const MAGIC: [u8; 4] = *b"AICM";
pub const VERSION: u32 = 1;

const KIND_FLOAT: u8 = 0;
const KIND_QUANT: u8 = 1;

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_POOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_DENSE: u8 = 5;
const TAG_SOFTMAX: u8 = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Float(ModelGraph),
    Quant(QuantModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Float(_) => "float",
            Model::Quant(_) => "quant",
        }
    }

    pub fn class_labels(&self) -> &[String] {
        match self {
            Model::Float(g) => g.class_labels(),
            Model::Quant(m) => m.class_labels(),
        }
    }

    pub fn input_shape(&self) -> &Shape {
        match self {
            Model::Float(g) => g.input_shape(),
            Model::Quant(m) => m.input_shape(),
        }
    }
}

impl From<ModelGraph> for Model {
    fn from(g: ModelGraph) -> Self {
        Model::Float(g)
    }
}

impl From<QuantModel> for Model {
    fn from(m: QuantModel) -> Self {
        Model::Quant(m)
    }
}

fn header(w: &mut Writer, kind: u8, input: &Shape, labels: &[String]) {
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u8(kind);
    w.usize(input.rank());
    for &d in input.dims() {
        w.usize(d);
    }
    w.usize(labels.len());
    for l in labels {
        w.str(l);
    }
}

fn qparams(w: &mut Writer, qp: QuantParams) {
    w.f32(qp.scale);
    w.i32(qp.zero_point);
}

fn geometry(w: &mut Writer, g: &ConvGeometry) {
    w.u8(TAG_CONV);
    for v in [g.in_ch, g.out_ch, g.kh, g.kw, g.stride, g.padding] {
        w.usize(v);
    }
}

fn pool(w: &mut Writer, p: &Pool2d) {
    w.u8(TAG_POOL);
    for v in [p.kh, p.kw, p.stride] {
        w.usize(v);
    }
}

fn encode_float(g: &ModelGraph) -> Vec<u8> {
    let mut w = Writer::default();
    header(&mut w, KIND_FLOAT, g.input_shape(), g.class_labels());
    w.usize(g.layers().len());
    for layer in g.layers() {
        match layer {
            Layer::Conv2d(c) => {
                geometry(&mut w, &c.geometry);
                c.weights
                    .data()
                    .iter()
                    .chain(c.bias.data())
                    .for_each(|&v| w.f32(v));
            }
            Layer::Dense(d) => {
                w.u8(TAG_DENSE);
                w.usize(d.in_features);
                w.usize(d.out_features);
                d.weights
                    .data()
                    .iter()
                    .chain(d.bias.data())
                    .for_each(|&v| w.f32(v));
            }
            Layer::MaxPool2d(p) => pool(&mut w, p),
            Layer::Relu => w.u8(TAG_RELU),
            Layer::Flatten => w.u8(TAG_FLATTEN),
            Layer::Softmax => w.u8(TAG_SOFTMAX),
        }
    }
    w.finish()
}

fn quant_payload(
    w: &mut Writer,
    weight_params: QuantParams,
    weights: &[i8],
    bias: &[i32],
    f: FixedPointMultiplier,
) {
    qparams(w, weight_params);
    w.bytes(&weights.iter().map(|&q| q as u8).collect::<Vec<_>>());
    bias.iter().for_each(|&b| w.i32(b));
    w.i32(f.m0);
    w.u32(f.shift);
}

fn encode_quant(m: &QuantModel) -> Vec<u8> {
    let mut w = Writer::default();
    header(&mut w, KIND_QUANT, m.input_shape(), m.class_labels());
    w.usize(m.sites().len());
    for &qp in m.sites() {
        qparams(&mut w, qp);
    }
    w.usize(m.layers().len());
    for layer in m.layers() {
        match layer {
            QuantLayer::Conv2d(c) => {
                geometry(&mut w, &c.geometry);
                quant_payload(&mut w, c.weight_params, &c.weights, &c.bias, c.multiplier);
            }
            QuantLayer::Dense(d) => {
                w.u8(TAG_DENSE);
                w.usize(d.in_features);
                w.usize(d.out_features);
                quant_payload(&mut w, d.weight_params, &d.weights, &d.bias, d.multiplier);
            }
            QuantLayer::MaxPool2d(p) => pool(&mut w, p),
            QuantLayer::Relu => w.u8(TAG_RELU),
            QuantLayer::Flatten => w.u8(TAG_FLATTEN),
            QuantLayer::Softmax => w.u8(TAG_SOFTMAX),
        }
    }
    w.finish()
}

pub fn encode_model(m: &Model) -> Vec<u8> {
    match m {
        Model::Float(g) => encode_float(g),
        Model::Quant(q) => encode_quant(q),
    }
}

/// Exact size in bytes of the encoded model.
pub fn serialized_size(m: &Model) -> usize {
    encode_model(m).len()
}

/// Checks magic, version and CRC, in that order. Returns the body after
/// the version field.
fn open<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    Ok(&check_crc(bytes, path)?[8..])
}

fn read_qparams(r: &mut Reader) -> Result<QuantParams> {
    let scale = r.f32()?;
    let zp = r.i32()?;
    QuantParams::new(scale, zp).map_err(|e| r.malformed(e.to_string()))
}

fn read_shape(r: &mut Reader, dims: Vec<usize>) -> Result<Shape> {
    Shape::new(dims).map_err(|e| r.malformed(e.to_string()))
}

fn read_floats(r: &mut Reader, dims: Vec<usize>) -> Result<FloatTensor> {
    let shape = read_shape(r, dims)?;
    let data = r.f32s(shape.element_count())?;
    FloatTensor::new(shape, data).map_err(|e| r.malformed(e.to_string()))
}

fn read_geometry(r: &mut Reader) -> Result<ConvGeometry> {
    Ok(ConvGeometry {
        in_ch: r.usize()?,
        out_ch: r.usize()?,
        kh: r.usize()?,
        kw: r.usize()?,
        stride: r.usize()?,
        padding: r.usize()?,
    })
}

fn read_pool(r: &mut Reader) -> Result<Pool2d> {
    Ok(Pool2d {
        kh: r.usize()?,
        kw: r.usize()?,
        stride: r.usize()?,
    })
}

struct QPayload {
    weight_params: QuantParams,
    weights: Vec<i8>,
    bias: Vec<i32>,
    multiplier: FixedPointMultiplier,
}

fn read_qpayload(r: &mut Reader, weights: usize, biases: usize) -> Result<QPayload> {
    let weight_params = read_qparams(r)?;
    let weights = r.i8s(weights)?;
    let bias = r.i32s(biases)?;
    let m0 = r.i32()?;
    let shift = r.u32()?;
    let multiplier =
        FixedPointMultiplier::new(m0, shift).map_err(|e| r.malformed(e.to_string()))?;
    Ok(QPayload {
        weight_params,
        weights,
        bias,
        multiplier,
    })
}

fn checked_product(r: &Reader, dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| r.malformed("layer dimensions overflow"))
}

fn decode_float(r: &mut Reader, input: Shape, labels: Vec<String>) -> Result<ModelGraph> {
    let count = r.usize()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let layer = match r.u8()? {
            TAG_CONV => {
                let g = read_geometry(r)?;
                checked_product(r, &[g.out_ch, g.in_ch, g.kh, g.kw])?;
                let weights = read_floats(r, vec![g.out_ch, g.in_ch, g.kh, g.kw])?;
                let bias = read_floats(r, vec![g.out_ch])?;
                Layer::Conv2d(
                    Conv2d::new(g, weights, bias).map_err(|e| r.malformed(e.to_string()))?,
                )
            }
            TAG_DENSE => {
                let (i, o) = (r.usize()?, r.usize()?);
                let weights = read_floats(r, vec![o, i])?;
                let bias = read_floats(r, vec![o])?;
                Layer::Dense(Dense::new(weights, bias).map_err(|e| r.malformed(e.to_string()))?)
            }
            TAG_POOL => Layer::MaxPool2d(read_pool(r)?),
            TAG_RELU => Layer::Relu,
            TAG_FLATTEN => Layer::Flatten,
            TAG_SOFTMAX => Layer::Softmax,
            tag => return Err(r.malformed(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    finish(r)?;
    ModelGraph::new(input, layers, labels).map_err(|e| r.malformed(e.to_string()))
}

fn decode_quant(r: &mut Reader, input: Shape, labels: Vec<String>) -> Result<QuantModel> {
    let n_sites = r.usize()?;
    if n_sites > r.remaining() / 8 {
        return Err(r.truncated());
    }
    let sites = (0..n_sites)
        .map(|_| read_qparams(r))
        .collect::<Result<Vec<_>>>()?;
    let site = |r: &Reader, i: usize| {
        sites
            .get(i)
            .copied()
            .ok_or_else(|| r.malformed(format!("layer refers to missing site {i}")))
    };
    let count = r.usize()?;
    let mut layers = Vec::new();
    for i in 0..count {
        let layer = match r.u8()? {
            TAG_CONV => {
                let geometry = read_geometry(r)?;
                let n = checked_product(
                    r,
                    &[geometry.out_ch, geometry.in_ch, geometry.kh, geometry.kw],
                )?;
                let p = read_qpayload(r, n, geometry.out_ch)?;
                QuantLayer::Conv2d(QConv2d {
                    geometry,
                    weights: p.weights,
                    weight_params: p.weight_params,
                    bias: p.bias,
                    input: site(r, i)?,
                    output: site(r, i + 1)?,
                    multiplier: p.multiplier,
                })
            }
            TAG_DENSE => {
                let (in_features, out_features) = (r.usize()?, r.usize()?);
                let n = checked_product(r, &[in_features, out_features])?;
                let p = read_qpayload(r, n, out_features)?;
                QuantLayer::Dense(QDense {
                    in_features,
                    out_features,
                    weights: p.weights,
                    weight_params: p.weight_params,
                    bias: p.bias,
                    input: site(r, i)?,
                    output: site(r, i + 1)?,
                    multiplier: p.multiplier,
                })
            }
            TAG_POOL => QuantLayer::MaxPool2d(read_pool(r)?),
            TAG_RELU => QuantLayer::Relu,
            TAG_FLATTEN => QuantLayer::Flatten,
            TAG_SOFTMAX => QuantLayer::Softmax,
            tag => return Err(r.malformed(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    finish(r)?;
    QuantModel::new(input, layers, sites, labels).map_err(|e| r.malformed(e.to_string()))
}

fn finish(r: &Reader) -> Result<()> {
    match r.remaining() {
        0 => Ok(()),
        n => Err(r.malformed(format!("{n} trailing bytes after the last layer"))),
    }
}

/// Decodes a model image; `path` only labels errors.
pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model> {
    let body = open(bytes, path)?;
    let mut r = Reader::new(body, path);
    let kind = r.u8()?;
    let rank = r.usize()?;
    if !(1..=4).contains(&rank) {
        return Err(r.malformed(format!("input rank {rank} outside 1..=4")));
    }
    let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let input = read_shape(&mut r, dims)?;
    let n_labels = r.usize()?;
    if n_labels > r.remaining() / 4 {
        return Err(r.truncated());
    }
    let labels = (0..n_labels).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    match kind {
        KIND_FLOAT => decode_float(&mut r, input, labels).map(Model::Float),
        KIND_QUANT => decode_quant(&mut r, input, labels).map(Model::Quant),
        k => Err(r.malformed(format!("unknown model kind {k}"))),
    }
}

pub fn save_model(m: &Model, path: &Path) -> Result<()> {
    write_file(path, &encode_model(m))
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&read_file(path)?, path)
}

/// Layer-by-layer structural fingerprint used to compare a float graph
/// with its quantized form.
fn float_signature(g: &ModelGraph) -> Vec<String> {
    g.layers()
        .iter()
        .map(|l| match l {
            Layer::Conv2d(c) => format!("{:?}", c.geometry),
            Layer::Dense(d) => format!("Dense({},{})", d.in_features, d.out_features),
            Layer::MaxPool2d(p) => format!("{p:?}"),
            other => other.name().to_string(),
        })
        .collect()
}

fn quant_signature(m: &QuantModel) -> Vec<String> {
    m.layers()
        .iter()
        .map(|l| match l {
            QuantLayer::Conv2d(c) => format!("{:?}", c.geometry),
            QuantLayer::Dense(d) => format!("Dense({},{})", d.in_features, d.out_features),
            QuantLayer::MaxPool2d(p) => format!("{p:?}"),
            other => other.name().to_string(),
        })
        .collect()
}

/// `serialized_size(float) / serialized_size(quant)` for two forms of the
/// same architecture.
pub fn size_ratio(float: &ModelGraph, quant: &QuantModel) -> Result<f64> {
    if float.input_shape() != quant.input_shape() {
        return Err(Error::ArchitectureMismatch(format!(
            "input shapes {} and {} differ",
            float.input_shape(),
            quant.input_shape()
        )));
    }
    let (a, b) = (float_signature(float), quant_signature(quant));
    if a != b {
        let at = a
            .iter()
            .zip(&b)
            .position(|(x, y)| x != y)
            .unwrap_or(a.len().min(b.len()));
        return Err(Error::ArchitectureMismatch(format!(
            "layer lists diverge at layer {at} ({} vs {} layers)",
            a.len(),
            b.len()
        )));
    }
    let f = encode_float(float).len();
    let q = encode_quant(quant).len();
    Ok(f as f64 / q as f64)
}
