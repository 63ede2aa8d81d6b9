//! Naive integer oracles for the optimized kernels.
//!
//! Direct nested loops over every output element and every tap, with bounds
//! checks instead of padding buffers. Deliberately unoptimized; the test
//! suites hold the optimized kernels bit-exact against these.

use crate::qcore::{derive_requant, requantize, QuantParams};

use super::{ConvSpec, KernelError, Shape, Tensor};

struct Operands<'a> {
    x: &'a [i8],
    xs: Shape,
    x_qp: QuantParams,
    w: &'a [i8],
    ws: Shape,
    w_qp: QuantParams,
    b: &'a [i32],
}

fn operands<'a>(input: &'a Tensor, weights: &'a Tensor, bias: &'a Tensor) -> Result<Operands<'a>, KernelError> {
    let (x, x_qp) = input.expect_i8("input")?;
    let (w, w_qp) = weights.expect_i8("weights")?;
    let (b, _) = bias.expect_i32("bias")?;
    Ok(Operands {
        x,
        xs: input.shape()?,
        x_qp,
        w,
        ws: weights.shape()?,
        w_qp,
        b,
    })
}

fn naive_conv(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    out_qp: QuantParams,
    depthwise: bool,
) -> Result<Tensor, KernelError> {
    let op = operands(input, weights, bias)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    if op.ws.h != kh || op.ws.w != kw || op.ws.c != op.xs.c || (depthwise && op.ws.n != 1) {
        return Err(KernelError::Dimension(format!(
            "weights {} incompatible with input {}",
            op.ws, op.xs
        )));
    }
    let cout = if depthwise { op.xs.c } else { op.ws.n };
    if op.b.len() != cout {
        return Err(KernelError::Dimension("bias length".into()));
    }
    let (oh, ow) = spec.output_hw(op.xs.h, op.xs.w)?;
    let fm = derive_requant(
        f64::from(op.x_qp.scale),
        f64::from(op.w_qp.scale),
        f64::from(out_qp.scale),
    )?;
    let (lo, hi) = spec.activation_clamp;
    let xs = op.xs;
    let mut out = Vec::with_capacity(xs.n * oh * ow * cout);
    for n in 0..xs.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..cout {
                    let mut acc: i32 = op.b[oc];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * sh + ky) as i64 - spec.padding.top as i64;
                            let ix = (ox * sw + kx) as i64 - spec.padding.left as i64;
                            if iy < 0 || ix < 0 || iy >= xs.h as i64 || ix >= xs.w as i64 {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            let channels = if depthwise { oc..oc + 1 } else { 0..xs.c };
                            for ic in channels {
                                let xv = i32::from(op.x[((n * xs.h + iy) * xs.w + ix) * xs.c + ic]);
                                let wv = if depthwise {
                                    op.w[(ky * kw + kx) * xs.c + ic]
                                } else {
                                    op.w[((oc * kh + ky) * kw + kx) * xs.c + ic]
                                };
                                acc += (xv - op.x_qp.zero_point) * i32::from(wv);
                            }
                        }
                    }
                    out.push(requantize(acc, fm, out_qp.zero_point).clamp(lo, hi));
                }
            }
        }
    }
    Tensor::int8(vec![xs.n, oh, ow, cout], out, out_qp)
}

pub fn conv2d_ref_int(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    out_qp: QuantParams,
) -> Result<Tensor, KernelError> {
    naive_conv(input, weights, bias, spec, out_qp, false)
}

pub fn depthwise_conv2d_ref_int(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    out_qp: QuantParams,
) -> Result<Tensor, KernelError> {
    naive_conv(input, weights, bias, spec, out_qp, true)
}

pub fn fully_connected_ref_int(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    out_qp: QuantParams,
    activation_clamp: (i8, i8),
) -> Result<Tensor, KernelError> {
    let (x, x_qp) = input.expect_i8("input")?;
    let (w, w_qp) = weights.expect_i8("weights")?;
    let (b, _) = bias.expect_i32("bias")?;
    if w.len() != x.len() * b.len() {
        return Err(KernelError::Dimension("dense operand lengths".into()));
    }
    let fm = derive_requant(f64::from(x_qp.scale), f64::from(w_qp.scale), f64::from(out_qp.scale))?;
    let mut out = Vec::with_capacity(b.len());
    for (j, &bj) in b.iter().enumerate() {
        let mut acc = bj;
        for (i, &xi) in x.iter().enumerate() {
            acc += (i32::from(xi) - x_qp.zero_point) * i32::from(w[j * x.len() + i]);
        }
        out.push(requantize(acc, fm, out_qp.zero_point).clamp(activation_clamp.0, activation_clamp.1));
    }
    Tensor::int8(vec![1, b.len()], out, out_qp)
}
