//! Convolution parameters and the small composite units built from them.

use rand::Rng;

use crate::error::{config_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Weights `(c_out, c_in, k, k)` and bias `(c_out)` of a convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

pub fn bias_shape(c_out: usize) -> Shape {
    Shape {
        n: c_out,
        c: 1,
        h: 1,
        w: 1,
    }
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let ws = weight.shape();
        if !matches!(ws.h, 1 | 3) || ws.h != ws.w {
            return Err(config_err!("kernel must be 1x1 or 3x3, got {}x{}", ws.h, ws.w));
        }
        if bias.numel() != ws.n {
            return Err(config_err!("bias has {} entries for {} outputs", bias.numel(), ws.n));
        }
        if stride == 0 {
            return Err(config_err!("stride must be positive"));
        }
        let bias = bias.reshape(bias_shape(ws.n))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Zero weights and bias, "same" padding, stride 1.
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Result<Self> {
        let ws = Shape::new(c_out, c_in, k, k)?;
        Self::new(Tensor::zeros(ws), Tensor::zeros(bias_shape(c_out)), 1, k / 2)
    }

    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero bias.
    pub fn kaiming<R: Rng + ?Sized>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> Result<Self> {
        let ws = Shape::new(c_out, c_in, k, k)?;
        let bound = (6.0 / (c_in * k * k) as f64).sqrt();
        Self::new(
            Tensor::uniform(ws, -bound, bound, rng),
            Tensor::zeros(bias_shape(c_out)),
            1,
            k / 2,
        )
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Conv {
        Conv {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// A convolution whose parameters live on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d(x, self.weight, Some(self.bias), self.stride, self.padding)
    }

    pub fn c_in<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.weight).c
    }

    pub fn c_out<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.weight).n
    }
}

/// relu -> 3x3 conv -> relu -> 3x3 conv, plus identity skip.
#[derive(Debug, Clone, Copy)]
pub struct ResidualConvUnit {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResidualConvUnit {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = tape.relu(x)?;
        let h = self.conv1.apply(tape, h)?;
        let h = tape.relu(h)?;
        let h = self.conv2.apply(tape, h)?;
        tape.add(h, x)
    }
}

/// 1x1 conv -> relu -> 1x1 conv, plus identity skip.
#[derive(Debug, Clone, Copy)]
pub struct PointwiseBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl PointwiseBlock {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.conv1.apply(tape, x)?;
        let h = tape.relu(h)?;
        let h = self.conv2.apply(tape, h)?;
        tape.add(h, x)
    }
}
