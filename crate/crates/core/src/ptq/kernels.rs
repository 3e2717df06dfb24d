//! Integer-only layer kernels.
//!
//! Convolution and dense kernels are written against a range of output units
//! (output channels or output features) so a caller can split the units over
//! workers. Each output element is always accumulated by exactly one call in
//! a fixed order, which keeps results independent of the split.

use std::ops::Range;

use super::model::{QConv2d, QDense};
use super::params::requant;
use crate::error::{Error, Result};
use crate::nnf::{kernels_pool_windows, Pool2d};
use crate::tensor::{QuantParams, QuantTensor, Shape};

/// Largest per-MAC magnitude: `|q_in - z_in| <= 255` times `|q_w| <= 127`.
pub const MAX_MAC_MAGNITUDE: i64 = 255 * 127;
/// MAC count bound that keeps the accumulator inside 32 bits.
pub const MAX_MACS: usize = 65536;

/// Runs a unit-range kernel over `units` output units, each `unit_len`
/// contiguous elements of `out`.
pub trait UnitExecutor {
    fn run(
        &self,
        units: usize,
        unit_len: usize,
        out: &mut [i8],
        kernel: &(dyn Fn(Range<usize>, &mut [i8]) + Sync),
    );
}

/// Single call over every unit, on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl UnitExecutor for Sequential {
    fn run(
        &self,
        units: usize,
        _unit_len: usize,
        out: &mut [i8],
        kernel: &(dyn Fn(Range<usize>, &mut [i8]) + Sync),
    ) {
        kernel(0..units, out);
    }
}

fn check_input(expected: QuantParams, qx: &QuantTensor) -> Result<()> {
    if qx.qparams() != expected {
        return Err(Error::QParamsMismatch(format!(
            "tensor carries {:?}, layer expects {:?}",
            qx.qparams(),
            expected
        )));
    }
    Ok(())
}

/// Input with the zero point removed, so padding contributes exactly 0.
fn centered(qx: &QuantTensor) -> Vec<i32> {
    let z = qx.qparams().zero_point;
    qx.data().iter().map(|&q| q as i32 - z).collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_units(
    layer: &QConv2d,
    input: &[i32],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    channels: Range<usize>,
    out: &mut [i8],
) {
    let g = layer.geometry;
    let ksize = g.kh * g.kw;
    let plane = in_h * in_w;
    let z_out = layer.output.zero_point;
    let (h, w) = (in_h as isize, in_w as isize);
    debug_assert_eq!(out.len(), channels.len() * out_h * out_w);
    let mut dst = out.iter_mut();
    for o in channels {
        let w_o = &layer.weights[o * g.in_ch * ksize..(o + 1) * g.in_ch * ksize];
        for i in 0..out_h {
            let top = (i * g.stride) as isize - g.padding as isize;
            let u_lo = (-top).max(0) as usize;
            let u_hi = (h - top).min(g.kh as isize).max(0) as usize;
            for j in 0..out_w {
                let left = (j * g.stride) as isize - g.padding as isize;
                let v_lo = (-left).max(0) as usize;
                let v_hi = (w - left).min(g.kw as isize).max(0) as usize;
                let mut acc: i32 = layer.bias[o];
                // a window lying wholly in the padding sees only zeros
                let live = if v_lo < v_hi { g.in_ch } else { 0 };
                for c in 0..live {
                    let x_c = &input[c * plane..(c + 1) * plane];
                    let w_c = &w_o[c * ksize..(c + 1) * ksize];
                    for u in u_lo..u_hi {
                        let row = (top + u as isize) as usize * in_w;
                        let x_row = &x_c[row + (left + v_lo as isize) as usize
                            ..row + (left + v_hi as isize) as usize];
                        let w_row = &w_c[u * g.kw + v_lo..u * g.kw + v_hi];
                        for (&xv, &wv) in x_row.iter().zip(w_row) {
                            acc += xv * wv as i32;
                        }
                    }
                }
                *dst.next().expect("output sized to units") = requant(acc, layer.multiplier, z_out);
            }
        }
    }
}

pub(crate) fn dense_units(layer: &QDense, input: &[i32], features: Range<usize>, out: &mut [i8]) {
    let z_out = layer.output.zero_point;
    for (dst, o) in out.iter_mut().zip(features) {
        let row = &layer.weights[o * layer.in_features..(o + 1) * layer.in_features];
        let acc = row
            .iter()
            .zip(input)
            .fold(layer.bias[o], |acc, (&wv, &xv)| acc + xv * wv as i32);
        *dst = requant(acc, layer.multiplier, z_out);
    }
}

pub fn qconv2d_with(
    qx: &QuantTensor,
    layer: &QConv2d,
    exec: &dyn UnitExecutor,
) -> Result<QuantTensor> {
    check_input(layer.input, qx)?;
    let out_shape = layer
        .geometry
        .output_shape(qx.shape())
        .map_err(|reason| Error::IncompatibleLayer { layer: 0, reason })?;
    let (in_h, in_w) = (qx.shape().dims()[1], qx.shape().dims()[2]);
    let (out_h, out_w) = (out_shape.dims()[1], out_shape.dims()[2]);
    let input = centered(qx);
    let mut out = vec![0i8; out_shape.element_count()];
    exec.run(
        layer.geometry.out_ch,
        out_h * out_w,
        &mut out,
        &|units, dst| conv_units(layer, &input, in_h, in_w, out_h, out_w, units, dst),
    );
    Ok(QuantTensor::from_parts(out_shape, out, layer.output))
}

pub fn qdense_with(
    qx: &QuantTensor,
    layer: &QDense,
    exec: &dyn UnitExecutor,
) -> Result<QuantTensor> {
    check_input(layer.input, qx)?;
    let out_shape =
        crate::nnf::dense_output_shape(layer.in_features, layer.out_features, qx.shape())
            .map_err(|reason| Error::IncompatibleLayer { layer: 0, reason })?;
    let input = centered(qx);
    let mut out = vec![0i8; layer.out_features];
    exec.run(layer.out_features, 1, &mut out, &|units, dst| {
        dense_units(layer, &input, units, dst)
    });
    Ok(QuantTensor::from_parts(out_shape, out, layer.output))
}

pub fn qconv2d(qx: &QuantTensor, layer: &QConv2d) -> Result<QuantTensor> {
    qconv2d_with(qx, layer, &Sequential)
}

pub fn qdense(qx: &QuantTensor, layer: &QDense) -> Result<QuantTensor> {
    qdense_with(qx, layer, &Sequential)
}

/// `max(q, z)`: real-valued ReLU on the shared grid.
pub fn qrelu(qx: &QuantTensor) -> QuantTensor {
    let z = qx.qparams().zero_point as i8;
    let data = qx.data().iter().map(|&q| q.max(z)).collect();
    QuantTensor::from_parts(qx.shape().clone(), data, qx.qparams())
}

pub fn qmaxpool(qx: &QuantTensor, layer: &Pool2d) -> Result<QuantTensor> {
    let out_shape = layer
        .output_shape(qx.shape())
        .map_err(|reason| Error::IncompatibleLayer { layer: 0, reason })?;
    let out = kernels_pool_windows(qx.shape(), &out_shape, layer, qx.data(), i8::max);
    Ok(QuantTensor::from_parts(out_shape, out, qx.qparams()))
}

pub fn qflatten(qx: QuantTensor) -> QuantTensor {
    let shape = Shape::new(vec![qx.shape().element_count()]).expect("flattened shape is valid");
    qx.with_shape(shape)
}
