//! Dense row-major tensors for `f32` and `i8` data.
//!
//! Images use C/H/W order. Tensors are immutable once built: constructors
//! validate shape and contents, and there is no mutable access to the data.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_RANK: usize = 4;
const MAX_ELEMENTS: usize = i32::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::InvalidShape {
                dims,
                reason: "rank must be between 1 and 4",
            });
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape {
                dims,
                reason: "every dimension must be at least 1",
            });
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= MAX_ELEMENTS);
        if count.is_none() {
            return Err(Error::InvalidShape {
                dims,
                reason: "element count exceeds 2^31 - 1",
            });
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major linear index of `coords`; the last coordinate varies fastest.
    pub fn offset(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims.len() {
            return Err(Error::RankMismatch {
                expected: self.dims.len(),
                actual: coords.len(),
            });
        }
        let mut index = 0;
        for (axis, (&c, &d)) in coords.iter().zip(&self.dims).enumerate() {
            if c >= d {
                return Err(Error::OutOfBounds {
                    axis,
                    coord: c,
                    dim: d,
                });
            }
            index = index * d + c;
        }
        Ok(index)
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(shape: Shape) -> Self {
        shape.dims
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl FloatTensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.element_count() {
            return Err(Error::LengthMismatch {
                expected: shape.element_count(),
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FloatTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.element_count();
        FloatTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor whose values are already known to be finite, such as
    /// kernel outputs computed from finite inputs.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.element_count(), data.len());
        FloatTensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.element_count() != self.data.len() {
            return Err(Error::LengthMismatch {
                expected: shape.element_count(),
                actual: self.data.len(),
            });
        }
        Ok(FloatTensor {
            shape,
            data: self.data,
        })
    }

    /// Minimum and maximum under IEEE total order, so `-0.0` sorts below `0.0`.
    pub fn minmax(&self) -> (f32, f32) {
        let first = self.data[0];
        self.data
            .iter()
            .skip(1)
            .fold((first, first), |(lo, hi), &x| {
                (
                    if x.total_cmp(&lo).is_lt() { x } else { lo },
                    if x.total_cmp(&hi).is_gt() { x } else { hi },
                )
            })
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Index of the first maximal element.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Affine map between reals and 8-bit integers: `real = (q - zero_point) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidQuantParams(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if !(-128..=127).contains(&zero_point) {
            return Err(Error::InvalidQuantParams(format!(
                "zero point {zero_point} outside [-128, 127]"
            )));
        }
        Ok(QuantParams { scale, zero_point })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    shape: Shape,
    data: Vec<i8>,
    qparams: QuantParams,
}

impl QuantTensor {
    pub fn new(shape: Shape, data: Vec<i8>, qparams: QuantParams) -> Result<Self> {
        if data.len() != shape.element_count() {
            return Err(Error::LengthMismatch {
                expected: shape.element_count(),
                actual: data.len(),
            });
        }
        Ok(QuantTensor {
            shape,
            data,
            qparams,
        })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<i8>, qparams: QuantParams) -> Self {
        debug_assert_eq!(shape.element_count(), data.len());
        QuantTensor {
            shape,
            data,
            qparams,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn qparams(&self) -> QuantParams {
        self.qparams
    }

    pub(crate) fn with_shape(self, shape: Shape) -> Self {
        debug_assert_eq!(shape.element_count(), self.data.len());
        QuantTensor { shape, ..self }
    }
}
