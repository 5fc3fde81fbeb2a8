//! Dense row-major `f64` tensors and the grouped convolution primitive.
//!
//! Axis order throughout the crate is `(batch, channels, spatial...)`.

mod conv;
mod geometry;
mod spatial;

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use conv::conv_nd;
pub use conv::{conv_nd_with, LoopOrder};
pub(crate) use conv::conv_slices;
pub use geometry::{conv_output_extent, ConvGeometry, MAX_SPATIAL_AXES};
pub use spatial::{batched_outer, pad_spatial, truncate_spatial};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let data = vec![0.0; shape.numel()];
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        let data = vec![value; shape.numel()];
        Tensor { shape, data }
    }

    /// Samples every element from `N(0, scale^2)`.
    pub fn random_normal<R: Rng + ?Sized>(shape: impl Into<Shape>, scale: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Extent of the leading axis.
    pub fn batch(&self) -> usize {
        self.dims().first().copied().unwrap_or(0)
    }

    /// Reinterprets the flat buffer under a new shape with the same element count.
    pub fn reshape(self, dims: impl Into<Shape>) -> Result<Self> {
        let shape = dims.into();
        if shape.numel() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Rows `range` of the leading axis, keeping the axis.
    pub fn slice_batch(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let b = self.batch();
        if self.rank() == 0 || range.start > range.end || range.end > b {
            return Err(Error::Range(format!(
                "batch slice {range:?} out of bounds for {}",
                self.shape
            )));
        }
        let row = self.numel() / b.max(1);
        let mut dims = self.dims().to_vec();
        dims[0] = range.len();
        Ok(Tensor {
            shape: Shape(dims),
            data: self.data[range.start * row..range.end * row].to_vec(),
        })
    }

    /// Row `b` of the leading axis with the axis dropped.
    pub fn row(&self, b: usize) -> Result<Self> {
        let t = self.slice_batch(b..b + 1)?;
        let dims = t.dims()[1..].to_vec();
        t.reshape(dims)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::Shape(format!(
                    "cannot stack {} with {}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(first.dims());
        Tensor::new(dims, data)
    }

    /// Concatenates along the existing leading axis.
    pub fn concat_batch(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot concatenate an empty list".into()))?;
        let tail = &first.dims()[1..];
        let mut batch = 0;
        let mut data = Vec::new();
        for t in items {
            if t.rank() == 0 || &t.dims()[1..] != tail {
                return Err(Error::Shape(format!(
                    "cannot concatenate {} with {}",
                    t.shape, first.shape
                )));
            }
            batch += t.batch();
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![batch];
        dims.extend_from_slice(tail);
        Tensor::new(dims, data)
    }

    /// Sums over the leading axis, dropping it.
    pub fn sum_batch(&self) -> Result<Self> {
        if self.rank() == 0 {
            return Err(Error::Shape("cannot sum a scalar over batch".into()));
        }
        let dims = self.dims()[1..].to_vec();
        let row: usize = dims.iter().product();
        let mut out = vec![0.0; row];
        for chunk in self.data.chunks_exact(row.max(1)).take(self.batch()) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        Tensor::new(dims, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest elementwise absolute difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
