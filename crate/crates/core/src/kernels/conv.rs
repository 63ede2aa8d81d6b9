//! Standard and depthwise int8 convolutions.

use crate::qcore::{derive_requant, requantize, FixedMul, QuantParams};

use super::{check_accumulator, ConvSpec, KernelError, Shape, Tensor};

/// A convolution with shapes checked and requantization derived, ready to run
/// over raw slices.
#[derive(Debug, Clone)]
pub struct PreparedConv<'a> {
    pub input: Shape,
    pub output: Shape,
    pub spec: ConvSpec,
    pub weights: &'a [i8],
    pub bias: &'a [i32],
    pub input_zp: i32,
    pub output_zp: i32,
    pub requant: FixedMul,
    pub depthwise: bool,
}

/// Checks that bias quantization matches `input.scale * weight.scale`.
pub(crate) fn check_bias_scale(in_qp: QuantParams, w_qp: QuantParams, b_qp: QuantParams) -> Result<(), KernelError> {
    let expected = f64::from(in_qp.scale) * f64::from(w_qp.scale);
    let got = f64::from(b_qp.scale);
    if ((got - expected) / expected).abs() > 1e-6 {
        return Err(KernelError::Format(format!(
            "bias scale {got} differs from input*weight scale {expected}"
        )));
    }
    Ok(())
}

impl<'a> PreparedConv<'a> {
    pub fn new(
        input: Shape,
        input_qp: QuantParams,
        weights: &'a Tensor,
        bias: &'a Tensor,
        spec: ConvSpec,
        out_qp: QuantParams,
        depthwise: bool,
    ) -> Result<Self, KernelError> {
        spec.check()?;
        out_qp.check()?;
        input_qp.check()?;
        let (w, w_qp) = weights.expect_i8("weights")?;
        let (b, b_qp) = bias.expect_i32("bias")?;
        if w_qp.zero_point != 0 {
            return Err(KernelError::Format("weights must be symmetric (zero point 0)".into()));
        }
        let ws = weights.shape()?;
        let (kh, kw) = spec.kernel;
        if ws.h != kh || ws.w != kw {
            return Err(KernelError::Dimension(format!(
                "weights {ws} do not match kernel {kh}x{kw}"
            )));
        }
        if ws.c != input.c {
            return Err(KernelError::Dimension(format!(
                "weights {ws} expect {} input channels, input has {}",
                ws.c, input.c
            )));
        }
        let out_c = if depthwise {
            if ws.n != 1 {
                return Err(KernelError::Dimension(format!(
                    "depthwise weights {ws} must have channel multiplier 1"
                )));
            }
            input.c
        } else {
            ws.n
        };
        if b.len() != out_c {
            return Err(KernelError::Dimension(format!(
                "bias has {} entries, expected {out_c}",
                b.len()
            )));
        }
        check_bias_scale(input_qp, w_qp, b_qp)?;
        let taps = if depthwise { kh * kw } else { kh * kw * input.c };
        check_accumulator(taps, b)?;
        let (oh, ow) = spec.output_hw(input.h, input.w)?;
        let requant = derive_requant(
            f64::from(input_qp.scale),
            f64::from(w_qp.scale),
            f64::from(out_qp.scale),
        )?;
        Ok(PreparedConv {
            input,
            output: Shape::new(input.n, oh, ow, out_c),
            spec,
            weights: w,
            bias: b,
            input_zp: input_qp.zero_point,
            output_zp: out_qp.zero_point,
            requant,
            depthwise,
        })
    }

    pub fn run(&self, input: &[i8], output: &mut [i8]) -> Result<(), KernelError> {
        if input.len() != self.input.len() || output.len() != self.output.len() {
            return Err(KernelError::Dimension(format!(
                "buffers of {} / {} elements for conv {} -> {}",
                input.len(),
                output.len(),
                self.input,
                self.output
            )));
        }
        let (lo, hi) = self.spec.activation_clamp;
        let (fm, zp) = (self.requant, self.output_zp);
        let sink = |i: usize, acc: i32| output[i] = requantize(acc, fm, zp).clamp(lo, hi);
        if self.depthwise {
            self.depthwise_accumulators(input, sink);
        } else {
            self.standard_accumulators(input, sink);
        }
        Ok(())
    }

    /// Raw int32 accumulators (bias included) before requantization.
    pub fn accumulate(&self, input: &[i8], output: &mut [i32]) -> Result<(), KernelError> {
        if input.len() != self.input.len() || output.len() != self.output.len() {
            return Err(KernelError::Dimension("accumulator buffer sizes".into()));
        }
        let sink = |i: usize, acc: i32| output[i] = acc;
        if self.depthwise {
            self.depthwise_accumulators(input, sink);
        } else {
            self.standard_accumulators(input, sink);
        }
        Ok(())
    }

    #[inline(always)]
    fn standard_accumulators(&self, input: &[i8], mut sink: impl FnMut(usize, i32)) {
        let Shape {
            n,
            h: ih,
            w: iw,
            c: cin,
        } = self.input;
        let Shape {
            h: oh, w: ow, c: cout, ..
        } = self.output;
        let (kh, kw) = self.spec.kernel;
        let (sh, sw) = self.spec.stride;
        let pad = self.spec.padding;
        let taps = kh * kw * cin;
        let zp = self.input_zp as i16;

        // Tap-major weights so the inner loop runs across output channels.
        let mut wt = vec![0i16; taps * cout];
        for (oc, row) in self.weights.chunks_exact(taps).enumerate() {
            for (t, &v) in row.iter().enumerate() {
                wt[t * cout + oc] = i16::from(v);
            }
        }
        // Centered patch; padding taps are exactly zero.
        let mut patch = vec![0i16; taps];
        let mut acc = vec![0i32; cout];

        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..kh {
                        let iy = (oy * sh + ky) as isize - pad.top as isize;
                        for kx in 0..kw {
                            let ix = (ox * sw + kx) as isize - pad.left as isize;
                            let dst = &mut patch[(ky * kw + kx) * cin..][..cin];
                            if iy < 0 || ix < 0 || iy as usize >= ih || ix as usize >= iw {
                                dst.fill(0);
                            } else {
                                let at = ((b * ih + iy as usize) * iw + ix as usize) * cin;
                                for (d, &x) in dst.iter_mut().zip(&input[at..at + cin]) {
                                    *d = i16::from(x).wrapping_sub(zp);
                                }
                            }
                        }
                    }
                    acc.copy_from_slice(self.bias);
                    for (t, &xv) in patch.iter().enumerate() {
                        if xv == 0 {
                            continue;
                        }
                        // |xv| <= 255 and |w| <= 128, so the product fits in i16,
                        // and the sum is bounded by check_accumulator.
                        for (a, &w) in acc.iter_mut().zip(&wt[t * cout..][..cout]) {
                            *a = a.wrapping_add(i32::from(xv.wrapping_mul(w)));
                        }
                    }
                    let out_base = ((b * oh + oy) * ow + ox) * cout;
                    for (oc, &a) in acc.iter().enumerate() {
                        sink(out_base + oc, a);
                    }
                }
            }
        }
    }

    #[inline(always)]
    fn depthwise_accumulators(&self, input: &[i8], mut sink: impl FnMut(usize, i32)) {
        let Shape { n, h: ih, w: iw, c } = self.input;
        let Shape { h: oh, w: ow, .. } = self.output;
        let (kh, kw) = self.spec.kernel;
        let (sh, sw) = self.spec.stride;
        let pad = self.spec.padding;
        let zp = self.input_zp as i16;
        let mut acc = vec![0i32; c];

        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    acc.copy_from_slice(self.bias);
                    for ky in 0..kh {
                        let iy = (oy * sh + ky) as isize - pad.top as isize;
                        if iy < 0 || iy as usize >= ih {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * sw + kx) as isize - pad.left as isize;
                            if ix < 0 || ix as usize >= iw {
                                continue;
                            }
                            let at = ((b * ih + iy as usize) * iw + ix as usize) * c;
                            let x = &input[at..at + c];
                            let w = &self.weights[(ky * kw + kx) * c..][..c];
                            for ((a, &xv), &wv) in acc.iter_mut().zip(x).zip(w) {
                                *a = a.wrapping_add(i32::from(
                                    i16::from(xv).wrapping_sub(zp).wrapping_mul(i16::from(wv)),
                                ));
                            }
                        }
                    }
                    let out_base = ((b * oh + oy) * ow + ox) * c;
                    for (ch, &a) in acc.iter().enumerate() {
                        sink(out_base + ch, a);
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| i32::from(x) * i32::from(y)).sum()
}

fn run_prepared(input: &Tensor, prepared: &PreparedConv<'_>, out_qp: QuantParams) -> Result<Tensor, KernelError> {
    let (x, _) = input.expect_i8("input")?;
    let mut out = vec![0i8; prepared.output.len()];
    prepared.run(x, &mut out)?;
    Tensor::int8(prepared.output.dims().to_vec(), out, out_qp)
}

/// Standard convolution; weights are `(cout, kh, kw, cin)`.
pub fn conv2d_s8(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    out_qp: QuantParams,
) -> Result<Tensor, KernelError> {
    let (_, in_qp) = input.expect_i8("input")?;
    let prepared = PreparedConv::new(input.shape()?, in_qp, weights, bias, *spec, out_qp, false)?;
    run_prepared(input, &prepared, out_qp)
}

/// Depthwise convolution with channel multiplier 1; weights are
/// `(1, kh, kw, c)`.
pub fn depthwise_conv2d_s8(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    out_qp: QuantParams,
) -> Result<Tensor, KernelError> {
    let (_, in_qp) = input.expect_i8("input")?;
    let prepared = PreparedConv::new(input.shape()?, in_qp, weights, bias, *spec, out_qp, true)?;
    run_prepared(input, &prepared, out_qp)
}
