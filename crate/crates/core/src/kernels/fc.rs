//! Dense layers: the int8 hidden layer and the full-precision output layer.

use crate::qcore::{derive_requant, requantize, FixedMul, QuantParams};

use super::conv::{check_bias_scale, dot_i8};
use super::{check_accumulator, KernelError, Tensor};

#[derive(Debug, Clone)]
pub struct PreparedFc<'a> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: &'a [i8],
    pub bias: &'a [i32],
    pub input_zp: i32,
    pub output_zp: i32,
    pub requant: FixedMul,
    pub activation_clamp: (i8, i8),
}

fn matrix_dims(weights: &Tensor) -> Result<(usize, usize), KernelError> {
    match *weights.dims() {
        [out, inp] => Ok((out, inp)),
        _ => Err(KernelError::Dimension(format!(
            "dense weights must be (out_features, in_features), got {:?}",
            weights.dims()
        ))),
    }
}

impl<'a> PreparedFc<'a> {
    pub fn new(
        in_features: usize,
        input_qp: QuantParams,
        weights: &'a Tensor,
        bias: &'a Tensor,
        out_qp: QuantParams,
        activation_clamp: (i8, i8),
    ) -> Result<Self, KernelError> {
        input_qp.check()?;
        out_qp.check()?;
        let (w, w_qp) = weights.expect_i8("weights")?;
        let (b, b_qp) = bias.expect_i32("bias")?;
        if w_qp.zero_point != 0 {
            return Err(KernelError::Format("weights must be symmetric (zero point 0)".into()));
        }
        let (out_features, w_in) = matrix_dims(weights)?;
        if w_in != in_features {
            return Err(KernelError::Dimension(format!(
                "weights expect {w_in} input features, input has {in_features}"
            )));
        }
        if b.len() != out_features {
            return Err(KernelError::Dimension(format!(
                "bias has {} entries, expected {out_features}",
                b.len()
            )));
        }
        if activation_clamp.0 > activation_clamp.1 {
            return Err(KernelError::Dimension(format!(
                "activation clamp {activation_clamp:?} has min > max"
            )));
        }
        check_bias_scale(input_qp, w_qp, b_qp)?;
        check_accumulator(in_features, b)?;
        let requant = derive_requant(
            f64::from(input_qp.scale),
            f64::from(w_qp.scale),
            f64::from(out_qp.scale),
        )?;
        Ok(PreparedFc {
            in_features,
            out_features,
            weights: w,
            bias: b,
            input_zp: input_qp.zero_point,
            output_zp: out_qp.zero_point,
            requant,
            activation_clamp,
        })
    }

    pub fn run(&self, input: &[i8], output: &mut [i8]) -> Result<(), KernelError> {
        if input.len() != self.in_features || output.len() != self.out_features {
            return Err(KernelError::Dimension(format!(
                "buffers of {} / {} elements for dense {} -> {}",
                input.len(),
                output.len(),
                self.in_features,
                self.out_features
            )));
        }
        let (lo, hi) = self.activation_clamp;
        for (dst, acc) in output.iter_mut().zip(self.accumulators(input)) {
            *dst = requantize(acc, self.requant, self.output_zp).clamp(lo, hi);
        }
        Ok(())
    }

    /// Raw int32 accumulators (bias included) before requantization.
    pub fn accumulate(&self, input: &[i8], output: &mut [i32]) -> Result<(), KernelError> {
        if input.len() != self.in_features || output.len() != self.out_features {
            return Err(KernelError::Dimension("accumulator buffer sizes".into()));
        }
        for (dst, acc) in output.iter_mut().zip(self.accumulators(input)) {
            *dst = acc;
        }
        Ok(())
    }

    fn accumulators<'s>(&'s self, input: &'s [i8]) -> impl Iterator<Item = i32> + 's {
        self.weights
            .chunks_exact(self.in_features)
            .zip(self.bias)
            .map(move |(row, &b)| {
                let wsum: i32 = row.iter().map(|&v| i32::from(v)).sum();
                b + dot_i8(input, row) - self.input_zp * wsum
            })
    }
}

/// `out[j] = requantize(sum_i (x_i - x_zp) * w[j][i] + b[j])`, clamped.
/// The input is read as a flat vector whatever its dims.
pub fn fully_connected_s8(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    out_qp: QuantParams,
    activation_clamp: (i8, i8),
) -> Result<Tensor, KernelError> {
    let (x, in_qp) = input.expect_i8("input")?;
    let fc = PreparedFc::new(x.len(), in_qp, weights, bias, out_qp, activation_clamp)?;
    let mut out = vec![0i8; fc.out_features];
    fc.run(x, &mut out)?;
    Tensor::int8(vec![1, fc.out_features], out, out_qp)
}

/// Dense layer in real arithmetic over raw slices, accumulating in f64.
pub fn dense_real(input: &[f32], weights: &[f32], bias: &[f32], output: &mut [f32]) -> Result<(), KernelError> {
    let in_features = input.len();
    if weights.len() != in_features * output.len() || bias.len() != output.len() {
        return Err(KernelError::Dimension(format!(
            "dense real: {} weights and {} biases for {} -> {}",
            weights.len(),
            bias.len(),
            in_features,
            output.len()
        )));
    }
    for ((dst, row), &b) in output
        .iter_mut()
        .zip(weights.chunks_exact(in_features.max(1)))
        .zip(bias)
    {
        let acc: f64 = row.iter().zip(input).map(|(&w, &x)| f64::from(w) * f64::from(x)).sum();
        *dst = (acc + f64::from(b)) as f32;
    }
    Ok(())
}

/// Full-precision output layer. No clamp is applied.
pub fn fully_connected_real(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, KernelError> {
    let x = input.expect_f32("input")?;
    let w = weights.expect_f32("weights")?;
    let b = bias.expect_f32("bias")?;
    let (out_features, w_in) = matrix_dims(weights)?;
    if w_in != x.len() {
        return Err(KernelError::Dimension(format!(
            "weights expect {w_in} input features, input has {}",
            x.len()
        )));
    }
    let mut out = vec![0f32; out_features];
    dense_real(x, w, b, &mut out)?;
    Tensor::real32(vec![1, out_features], out)
}
