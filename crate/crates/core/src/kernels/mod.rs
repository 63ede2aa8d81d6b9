//! Integer (int8) kernels, their naive oracles, and image preprocessing.
//!
//! Every int8 kernel follows the same arithmetic contract: accumulate
//! `(x - x_zp) * w` plus the int32 bias in an `i32`, rescale with
//! [`requantize`](crate::qcore::requantize), then clamp to the layer's
//! activation bounds. Weights are symmetric (zero point 0) and biases are
//! quantized with `input.scale * weight.scale`.
//!
//! Kernels are single-threaded and allocation-light; the slice-level entry
//! points in [`conv`] and [`fc`] write into caller-owned buffers so the graph
//! executor can run them inside a tensor arena.

pub mod conv;
pub mod fc;
pub mod image;
pub mod reference;
mod tensor;

use thiserror::Error;

use crate::qcore::QuantError;

pub use conv::{conv2d_s8, depthwise_conv2d_s8};
pub use fc::{fully_connected_real, fully_connected_s8};
pub use image::{center_crop, quantize_image, resize_bilinear, rgb_to_gray, Image, PixelFormat};
pub use reference::conv2d_ref_int;
pub use tensor::{ElementKind, Shape, Tensor, TensorData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Geometry and activation bounds of a (depthwise) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    /// Output clamp in the int8 domain; `(out_zp, 127)` is a ReLU.
    pub activation_clamp: (i8, i8),
}

impl ConvSpec {
    /// No padding, no activation clamp.
    pub fn valid(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        ConvSpec {
            kernel,
            stride,
            padding: Padding::default(),
            activation_clamp: (-128, 127),
        }
    }

    /// "Same" padding: output is `ceil(in / stride)`, with any odd padding
    /// going to the bottom/right edge.
    pub fn same(kernel: (usize, usize), stride: (usize, usize), in_h: usize, in_w: usize) -> Self {
        let pad = |input: usize, k: usize, s: usize| {
            let out = input.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(input);
            (total / 2, total - total / 2)
        };
        let (top, bottom) = pad(in_h, kernel.0, stride.0);
        let (left, right) = pad(in_w, kernel.1, stride.1);
        ConvSpec {
            kernel,
            stride,
            padding: Padding {
                top,
                bottom,
                left,
                right,
            },
            activation_clamp: (-128, 127),
        }
    }

    pub fn with_clamp(mut self, min: i8, max: i8) -> Self {
        self.activation_clamp = (min, max);
        self
    }

    pub fn check(&self) -> Result<(), KernelError> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(KernelError::Dimension(format!(
                "kernel {kh}x{kw} and stride {sh}x{sw} must be positive"
            )));
        }
        if self.activation_clamp.0 > self.activation_clamp.1 {
            return Err(KernelError::Dimension(format!(
                "activation clamp {:?} has min > max",
                self.activation_clamp
            )));
        }
        Ok(())
    }

    /// `floor((in + pad_total - k) / stride) + 1` per axis.
    pub fn output_hw(&self, in_h: usize, in_w: usize) -> Result<(usize, usize), KernelError> {
        self.check()?;
        let axis = |input: usize, pad: usize, k: usize, s: usize| {
            let padded = input + pad;
            if padded < k {
                None
            } else {
                Some((padded - k) / s + 1)
            }
        };
        let p = self.padding;
        match (
            axis(in_h, p.top + p.bottom, self.kernel.0, self.stride.0),
            axis(in_w, p.left + p.right, self.kernel.1, self.stride.1),
        ) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(KernelError::Dimension(format!(
                "kernel {:?} larger than padded input {in_h}x{in_w}",
                self.kernel
            ))),
        }
    }
}

/// Largest accumulator magnitude a reduction over `taps` products can reach,
/// counting int8 inputs offset by a zero point (|x - zp| <= 255) and weights
/// down to -128.
pub fn accumulator_bound(taps: usize, max_abs_bias: i64) -> i64 {
    taps as i64 * 255 * 128 + max_abs_bias
}

pub(crate) fn check_accumulator(taps: usize, bias: &[i32]) -> Result<(), KernelError> {
    let max_bias = bias.iter().map(|b| i64::from(*b).abs()).max().unwrap_or(0);
    let bound = accumulator_bound(taps, max_bias);
    if bound > i64::from(i32::MAX) {
        return Err(KernelError::Dimension(format!(
            "accumulator bound {bound} over {taps} taps exceeds i32"
        )));
    }
    Ok(())
}
