//! Dense rank-4 `f32` tensors in (batch, channel, height, width) layout.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major contiguous activation or parameter storage.
///
/// Tensors are immutable once handed to a [`Graph`](crate::graph::Graph);
/// gradients live in a separate [`Gradients`](crate::graph::Gradients) table
/// with the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::invalid(format!("tensor dims must be >= 1, got {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for {shape}", shape.numel()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        assert!(shape.numel() > 0, "tensor dims must be >= 1, got {shape}");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// A `(len, 1, 1, 1)` tensor, the layout used for biases and norm affines.
    pub fn vector(values: Vec<f32>) -> Result<Self> {
        Self::new(Shape::new(values.len(), 1, 1, 1), values)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.offset(n, c, y, x)]
    }

    /// Contiguous `(h, w)` plane for one sample and channel.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Channels `[start, start + len)` of every sample.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Tensor> {
        if len == 0 || start + len > self.shape.c {
            return Err(Error::invalid(format!(
                "channel slice {start}..{} out of range for {}",
                start + len,
                self.shape
            )));
        }
        let s = self.shape;
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Tensor::new(Shape::new(s.n, len, s.h, s.w), data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f32) -> Tensor {
        self.map(|v| v * alpha)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add", self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of all elements accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Write the tensor in the `PTSR` interchange format (rank 4).
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let dims = self.shape.dims().map(|d| d as u32);
        RawTensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        }
        .write_to(w)
    }

    /// Read a tensor file of rank 1 to 4; lower ranks are left-padded with
    /// unit dimensions, so `(c, h, w)` becomes `(1, c, h, w)`.
    pub fn read_from(r: impl Read) -> Result<Tensor> {
        RawTensor::read_from(r)?.into_tensor()
    }
}

pub const TENSOR_MAGIC: &[u8; 4] = b"PTSR";
pub const TENSOR_VERSION: u8 = 1;

/// Arbitrary-rank contents of a tensor interchange file.
///
/// Layout: `"PTSR"`, version byte `1`, `u8` rank, `rank` little-endian `u32`
/// dims, then little-endian `f32` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let numel: usize = self.dims.iter().map(|&d| d as usize).product();
        if self.dims.len() > u8::MAX as usize || numel != self.data.len() {
            return Err(Error::invalid(format!(
                "raw tensor dims {:?} do not describe {} values",
                self.dims,
                self.data.len()
            )));
        }
        let mut buf = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        buf.extend_from_slice(TENSOR_MAGIC);
        buf.push(TENSOR_VERSION);
        buf.push(self.dims.len() as u8);
        for d in &self.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<RawTensor> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::malformed("tensor file", m);
        if bytes.len() < 6 || &bytes[..4] != TENSOR_MAGIC {
            return Err(bad("missing PTSR magic"));
        }
        if bytes[4] != TENSOR_VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        let rank = bytes[5] as usize;
        let header = 6 + 4 * rank;
        if bytes.len() < header {
            return Err(bad("truncated header"));
        }
        let dims: Vec<u32> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| bad("dims overflow"))?;
        if bytes.len() - header != numel * 4 {
            return Err(bad(&format!(
                "expected {} payload bytes, found {}",
                numel * 4,
                bytes.len() - header
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(RawTensor { dims, data })
    }

    pub fn into_tensor(self) -> Result<Tensor> {
        if self.dims.is_empty() || self.dims.len() > 4 {
            return Err(Error::malformed(
                "tensor file",
                format!("rank {} cannot be viewed as (n, c, h, w)", self.dims.len()),
            ));
        }
        let mut d = [1usize; 4];
        let off = 4 - self.dims.len();
        for (i, &v) in self.dims.iter().enumerate() {
            d[off + i] = v as usize;
        }
        Tensor::new(Shape::new(d[0], d[1], d[2], d[3]), self.data)
    }
}
