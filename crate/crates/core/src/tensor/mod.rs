//! Dense `H×W×C` tensors, convolution kernels and the differentiable
//! primitives the super-resolution networks are built from.
//!
//! Every public operation checks its output for NaN/Inf and reports
//! [`TensorError::NonFinite`] instead of letting bad values propagate.

mod adam;
mod container;
mod ops;
mod tape;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use container::{read_container, write_container, ContainerError, NamedTensor, MAGIC};
pub use ops::{
    conv2d, conv2d_backward, inner_product, leaky_relu, log_sigmoid, sigmoid, ConvGrads,
};
pub use tape::{Gradients, Slot, Tape, Var};

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {found} does not match shape {shape} ({expected} values)")]
    DataLength {
        shape: Shape,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("kernel expects {kernel} input channels, input has {input}")]
    ChannelMismatch { kernel: usize, input: usize },
    #[error("kernel spatial size {kh}x{kw} must be odd")]
    EvenKernel { kh: usize, kw: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("negative slope {0}")]
    NegativeSlope(f64),
    #[error("parameter layout mismatch: {params} parameters, {grads} gradients")]
    LayoutMismatch { params: usize, grads: usize },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("unknown variable {0:?}")]
    UnknownVar(Var),
}

/// Spatial extent and channel count of a [`Tensor`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Row-major `H×W×C` array of `f64`, channel index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        let shape = Shape::new(height, width, channels);
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// A `1×1×1` tensor holding `value`.
    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, 1, value)
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let shape = Shape::new(height, width, channels);
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.len(),
                found: data.len(),
            });
        }
        Self { shape, data }.finite("from_vec")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    t.data[(y * width + x) * channels + c] = f(y, x, c);
                }
            }
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// The single value of a `1×1×1` tensor (or the first element otherwise).
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        self.expect_shape(other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Extracts one channel as an `H×W×1` tensor.
    pub fn channel(&self, c: usize) -> Self {
        Self::from_fn(self.height(), self.width(), 1, |y, x, _| self.get(y, x, c))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_shape(&self, shape: Shape) -> Result<(), TensorError> {
        if self.shape != shape {
            return Err(TensorError::ShapeMismatch {
                expected: shape,
                found: self.shape,
            });
        }
        Ok(())
    }

    pub(crate) fn finite(self, op: &'static str) -> Result<Self, TensorError> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(TensorError::NonFinite(op))
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Convolution weights laid out `[ky][kx][in][out]` (output channel fastest)
/// plus one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    kh: usize,
    kw: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Kernel {
    pub fn zeros(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self, TensorError> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::EvenKernel { kh, kw });
        }
        Ok(Self {
            kh,
            kw,
            in_channels,
            out_channels,
            weights: vec![0.0; kh * kw * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        })
    }

    pub fn from_parts(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let mut k = Self::zeros(kh, kw, in_channels, out_channels)?;
        if weights.len() != k.weights.len() || bias.len() != out_channels {
            return Err(TensorError::LayoutMismatch {
                params: k.weights.len() + out_channels,
                grads: weights.len() + bias.len(),
            });
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite("Kernel::from_parts"));
        }
        k.weights = weights;
        k.bias = bias;
        Ok(k)
    }

    /// Same-shaped kernel with every weight and bias zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kw + kx) * self.in_channels + ci) * self.out_channels + co
    }

    #[inline]
    pub fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f64 {
        self.weights[self.index(ky, kx, ci, co)]
    }

    pub fn set_weight(&mut self, ky: usize, kx: usize, ci: usize, co: usize, value: f64) {
        let i = self.index(ky, kx, ci, co);
        self.weights[i] = value;
    }

    /// Number of trainable scalars (weights and biases).
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Weights followed by biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(&self.bias).copied()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}
