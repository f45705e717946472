//! Dense rank-4 tensors in batch/channel/height/width order, the forward
//! kernels built on them, and their hand-written adjoints.

mod ops;
mod vjp;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub(crate) use ops::bilinear_sample_backward;
pub(crate) use ops::conv2d_backward;
pub use ops::{
    add, avgpool2x, bilinear_sample, conv2d, lerp, mul, relu, scale, sub, upsample_nearest2x,
};
pub(crate) use ops::{avgpool2x_backward, upsample_nearest2x_backward};
pub use vjp::{tensor_forward, tensor_vjp, TensorOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { b, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape4 { c, ..self }
    }

    pub const fn with_hw(self, h: usize, w: usize) -> Self {
        Shape4 { h, w, ..self }
    }

    #[inline]
    pub const fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.b, self.c, self.h, self.w)
    }
}

/// Row-major B×C×H×W array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    /// Checked constructor: dimensions must be non-zero, the buffer must
    /// match the shape, and every value must be finite.
    pub fn new(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if shape.b == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape(
                "Tensor4::new",
                alloc::format!("zero dimension in {shape}"),
            ));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor4::new",
                alloc::format!("buffer of {} values for shape {shape}", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor4 { shape, data })
    }

    /// Skips the finiteness scan. Shape/length agreement is still asserted.
    pub(crate) fn from_raw(shape: Shape4, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            shape.len(),
            "buffer length does not match {shape}"
        );
        Tensor4 { shape, data }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape4, value: f64) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.b {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape4, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor4 { shape, data }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape4, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor4 { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.shape.index(b, c, y, x);
        self.data[i] = v;
    }

    /// The H×W plane for one (batch, channel) pair.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.shape.plane();
        let start = (b * self.shape.c + c) * n;
        &self.data[start..start + n]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let n = self.shape.plane();
        let start = (b * self.shape.c + c) * n;
        &mut self.data[start..start + n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Σ self ⊙ other.
    pub fn dot(&self, other: &Tensor4) -> Result<f64> {
        ensure_same("dot", self.shape, other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        ensure_same("add_assign", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Copy of batch item `b` as a batch of one.
    pub fn batch_item(&self, b: usize) -> Tensor4 {
        let n = self.shape.c * self.shape.plane();
        Tensor4 {
            shape: Shape4 { b: 1, ..self.shape },
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    /// Concatenate along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.data.len() * items.len());
        let mut b = 0;
        for t in items {
            ensure_same(
                "stack",
                Shape4 {
                    b: 1,
                    ..first.shape
                },
                Shape4 { b: 1, ..t.shape },
            )?;
            data.extend_from_slice(&t.data);
            b += t.shape.b;
        }
        Ok(Tensor4 {
            shape: Shape4 { b, ..first.shape },
            data,
        })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(items: &[&Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no tensors"))?;
        let s0 = first.shape;
        let mut c = 0;
        for t in items {
            if t.shape.b != s0.b || t.shape.h != s0.h || t.shape.w != s0.w {
                return Err(Error::Dimension {
                    op: "concat_channels",
                    lhs: s0,
                    rhs: t.shape,
                });
            }
            c += t.shape.c;
        }
        let shape = s0.with_c(c);
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..s0.b {
            for t in items {
                let n = t.shape.c * t.shape.plane();
                data.extend_from_slice(&t.data[b * n..(b + 1) * n]);
            }
        }
        Ok(Tensor4 { shape, data })
    }

    /// Channels `[start, start + len)`.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Tensor4> {
        if len == 0 || start + len > self.shape.c {
            return Err(Error::shape(
                "channel_slice",
                alloc::format!(
                    "[{start}, {}) out of {} channels",
                    start + len,
                    self.shape.c
                ),
            ));
        }
        let shape = self.shape.with_c(len);
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..self.shape.b {
            for c in start..start + len {
                data.extend_from_slice(self.plane(b, c));
            }
        }
        Ok(Tensor4 { shape, data })
    }

    /// Overwrite channels `[start, start + src.c)` with `src`.
    pub fn write_channels(&mut self, start: usize, src: &Tensor4) -> Result<()> {
        let s = src.shape;
        if s.b != self.shape.b
            || s.h != self.shape.h
            || s.w != self.shape.w
            || start + s.c > self.shape.c
        {
            return Err(Error::Dimension {
                op: "write_channels",
                lhs: self.shape,
                rhs: s,
            });
        }
        for b in 0..s.b {
            for c in 0..s.c {
                self.plane_mut(b, start + c)
                    .copy_from_slice(src.plane(b, c));
            }
        }
        Ok(())
    }
}

pub fn ensure_same(op: &'static str, lhs: Shape4, rhs: Shape4) -> Result<()> {
    if lhs == rhs {
        Ok(())
    } else {
        Err(Error::Dimension { op, lhs, rhs })
    }
}

/// 3×3 convolution weights `(C_out, C_in, 3, 3)` and per-output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weight: Tensor4,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(weight: Tensor4, bias: Vec<f64>) -> Result<Self> {
        let s = weight.shape();
        if s.h != 3 || s.w != 3 {
            return Err(Error::shape(
                "ConvKernel::new",
                alloc::format!("kernel must be 3x3, got {s}"),
            ));
        }
        if bias.len() != s.b {
            return Err(Error::shape(
                "ConvKernel::new",
                alloc::format!("{} bias values for {} output channels", bias.len(), s.b),
            ));
        }
        if !weight.is_finite() || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("ConvKernel::new", "non-finite weights"));
        }
        Ok(ConvKernel { weight, bias })
    }

    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        ConvKernel {
            weight: Tensor4::zeros(Shape4::new(c_out, c_in, 3, 3)),
            bias: vec![0.0; c_out],
        }
    }

    /// He-style normal init with zero bias.
    pub fn random<R: Rng + ?Sized>(c_out: usize, c_in: usize, rng: &mut R) -> Self {
        let std = libm::sqrt(2.0 / (9 * c_in) as f64);
        ConvKernel {
            weight: Tensor4::randn(Shape4::new(c_out, c_in, 3, 3), std, rng),
            bias: vec![0.0; c_out],
        }
    }

    /// Center tap 1 on the matching channel, zero elsewhere.
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels);
        for c in 0..channels {
            k.weight.set(c, c, 1, 1, 1.0);
        }
        k
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().b
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    /// Bias as a `(1, C_out, 1, 1)` tensor.
    pub fn bias_tensor(&self) -> Tensor4 {
        Tensor4::from_raw(Shape4::new(1, self.c_out(), 1, 1), self.bias.clone())
    }
}
