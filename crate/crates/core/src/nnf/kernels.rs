use super::{Conv2d, Dense, Pool2d};
use crate::error::{Error, Result};
use crate::tensor::{FloatTensor, Shape};

fn layer_err(reason: String) -> Error {
    // Kernels called directly have no layer index; graph execution re-labels.
    Error::IncompatibleLayer { layer: 0, reason }
}

/// Direct convolution with implicit zero padding.
///
/// Each output element is `bias[o]` plus the sum over `(c, u, v)` in that
/// order, so results are reproducible bit for bit.
pub fn conv2d_f(x: &FloatTensor, layer: &Conv2d) -> Result<FloatTensor> {
    let g = layer.geometry;
    let out_shape = g.output_shape(x.shape()).map_err(layer_err)?;
    let (h, w) = (x.shape().dims()[1] as isize, x.shape().dims()[2] as isize);
    let (oh, ow) = (out_shape.dims()[1], out_shape.dims()[2]);
    let input = x.data();
    let weights = layer.weights.data();
    let bias = layer.bias.data();
    let plane = (h * w) as usize;
    let ksize = g.kh * g.kw;

    let mut out = Vec::with_capacity(out_shape.element_count());
    for o in 0..g.out_ch {
        let w_o = &weights[o * g.in_ch * ksize..(o + 1) * g.in_ch * ksize];
        for i in 0..oh {
            let top = (i * g.stride) as isize - g.padding as isize;
            for j in 0..ow {
                let left = (j * g.stride) as isize - g.padding as isize;
                let mut acc = bias[o];
                for c in 0..g.in_ch {
                    let x_c = &input[c * plane..(c + 1) * plane];
                    let w_c = &w_o[c * ksize..(c + 1) * ksize];
                    for u in 0..g.kh {
                        let y = top + u as isize;
                        if y < 0 || y >= h {
                            continue;
                        }
                        let row = &x_c[(y * w) as usize..((y + 1) * w) as usize];
                        for v in 0..g.kw {
                            let xx = left + v as isize;
                            if xx < 0 || xx >= w {
                                continue;
                            }
                            acc += row[xx as usize] * w_c[u * g.kw + v];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    finite_or_err(out_shape, out)
}

pub fn dense_f(x: &FloatTensor, layer: &Dense) -> Result<FloatTensor> {
    let out_shape = super::dense_output_shape(layer.in_features, layer.out_features, x.shape())
        .map_err(layer_err)?;
    let input = x.data();
    let out = layer
        .weights
        .data()
        .chunks_exact(layer.in_features)
        .zip(layer.bias.data())
        .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (w, v)| acc + w * v))
        .collect();
    finite_or_err(out_shape, out)
}

pub fn relu_f(x: &FloatTensor) -> FloatTensor {
    FloatTensor::from_parts(
        x.shape().clone(),
        x.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

pub fn maxpool_f(x: &FloatTensor, layer: &Pool2d) -> Result<FloatTensor> {
    let out_shape = layer.output_shape(x.shape()).map_err(layer_err)?;
    let out = pool_windows(x.shape(), &out_shape, layer, x.data(), f32::max);
    Ok(FloatTensor::from_parts(out_shape, out))
}

/// Window reduction shared by the float and integer max-pool.
pub(crate) fn pool_windows<T: Copy>(
    in_shape: &Shape,
    out_shape: &Shape,
    layer: &Pool2d,
    data: &[T],
    reduce: impl Fn(T, T) -> T,
) -> Vec<T> {
    let (h, w) = (in_shape.dims()[1], in_shape.dims()[2]);
    let [c, oh, ow] = [
        out_shape.dims()[0],
        out_shape.dims()[1],
        out_shape.dims()[2],
    ];
    let mut out = Vec::with_capacity(out_shape.element_count());
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (y0, x0) = (i * layer.stride, j * layer.stride);
                let mut best = plane[y0 * w + x0];
                for u in 0..layer.kh {
                    for v in 0..layer.kw {
                        best = reduce(best, plane[(y0 + u) * w + x0 + v]);
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

pub fn flatten_f(x: &FloatTensor) -> FloatTensor {
    let shape = Shape::new(vec![x.shape().element_count()]).expect("flattened shape is valid");
    FloatTensor::from_parts(shape, x.data().to_vec())
}

/// Softmax over all elements, computed in double precision after
/// subtracting the maximum.
pub fn softmax_f(x: &FloatTensor) -> FloatTensor {
    let max = x
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = x.data().iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    FloatTensor::from_parts(
        x.shape().clone(),
        exps.iter().map(|&e| (e / total) as f32).collect(),
    )
}

fn finite_or_err(shape: Shape, data: Vec<f32>) -> Result<FloatTensor> {
    FloatTensor::new(shape, data)
}
