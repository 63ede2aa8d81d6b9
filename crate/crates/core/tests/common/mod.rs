#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinygaze::gaze::{build_model, LayerDesc, PipelineConfig};
use tinygaze::graph::{LayerOp, Model};
use tinygaze::kernels::{ConvSpec, Image, Padding, PixelFormat, Tensor};
use tinygaze::qcore::{dequantize, FixedMul, QuantParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_i8(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.gen()).collect()
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// A random small convolution problem.
#[derive(Debug, Clone)]
pub struct ConvCase {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
    pub spec: ConvSpec,
    pub out_qp: QuantParams,
    pub depthwise: bool,
}

pub fn random_conv_case(rng: &mut ChaCha8Rng, depthwise: bool) -> ConvCase {
    loop {
        let h = rng.gen_range(1..=8);
        let w = rng.gen_range(1..=8);
        let cin = rng.gen_range(1..=8);
        let cout = if depthwise { cin } else { rng.gen_range(1..=8) };
        let kh = rng.gen_range(1..=3);
        let kw = rng.gen_range(1..=3);
        let padding = Padding {
            top: rng.gen_range(0..=2),
            bottom: rng.gen_range(0..=2),
            left: rng.gen_range(0..=2),
            right: rng.gen_range(0..=2),
        };
        if h + padding.top + padding.bottom < kh || w + padding.left + padding.right < kw {
            continue;
        }
        let lo: i8 = rng.gen_range(-128..=0);
        let hi: i8 = rng.gen_range(lo..=127);
        let spec = ConvSpec {
            kernel: (kh, kw),
            stride: (rng.gen_range(1..=3), rng.gen_range(1..=3)),
            padding,
            activation_clamp: if rng.gen_bool(0.5) { (-128, 127) } else { (lo, hi) },
        };
        let in_qp = QuantParams::new(log_uniform(rng, 1e-3, 0.5) as f32, rng.gen_range(-128..=127)).unwrap();
        let w_qp = QuantParams::new(log_uniform(rng, 1e-3, 0.5) as f32, 0).unwrap();
        let acc_scale = f64::from(in_qp.scale) * f64::from(w_qp.scale);
        let out_qp = QuantParams::new(
            (acc_scale * log_uniform(rng, 1.001, 3000.0)) as f32,
            rng.gen_range(-128..=127),
        )
        .unwrap();
        let b_qp = QuantParams::new(acc_scale as f32, 0).unwrap();
        let wdims = if depthwise {
            vec![1, kh, kw, cin]
        } else {
            vec![cout, kh, kw, cin]
        };
        let wlen: usize = wdims.iter().product();
        let input = Tensor::int8(vec![1, h, w, cin], random_i8(rng, h * w * cin), in_qp).unwrap();
        let weights = Tensor::int8(wdims, random_i8(rng, wlen), w_qp).unwrap();
        let bias = Tensor::int32(
            vec![cout],
            (0..cout).map(|_| rng.gen_range(-40_000..=40_000)).collect(),
            b_qp,
        )
        .unwrap();
        return ConvCase {
            input,
            weights,
            bias,
            spec,
            out_qp,
            depthwise,
        };
    }
}

/// Convolution over dequantized operands in f64, clamped to the real
/// range of the activation clamp.
pub fn conv_real(case: &ConvCase) -> Vec<f64> {
    let s = case.input.shape().unwrap();
    let in_qp = case.input.qp().unwrap();
    let w_qp = case.weights.qp().unwrap();
    let b_qp = case.bias.qp().unwrap();
    let x = case.input.as_i8().unwrap();
    let w = case.weights.as_i8().unwrap();
    let b = case.bias.as_i32().unwrap();
    let (kh, kw) = case.spec.kernel;
    let (sh, sw) = case.spec.stride;
    let p = case.spec.padding;
    let oh = (s.h + p.top + p.bottom - kh) / sh + 1;
    let ow = (s.w + p.left + p.right - kw) / sw + 1;
    let cout = b.len();
    let deq = |q: i8, qp: QuantParams| f64::from(q as i32 - qp.zero_point) * f64::from(qp.scale);
    let lo = deq(case.spec.activation_clamp.0, case.out_qp);
    let hi = deq(case.spec.activation_clamp.1, case.out_qp);
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..cout {
                let mut acc = f64::from(b[oc]) * f64::from(b_qp.scale);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * sh + ky) as i64 - p.top as i64;
                        let ix = (ox * sw + kx) as i64 - p.left as i64;
                        if iy < 0 || ix < 0 || iy >= s.h as i64 || ix >= s.w as i64 {
                            continue;
                        }
                        let base = (iy as usize * s.w + ix as usize) * s.c;
                        if case.depthwise {
                            acc += deq(x[base + oc], in_qp) * deq(w[(ky * kw + kx) * s.c + oc], w_qp);
                        } else {
                            for ic in 0..s.c {
                                acc += deq(x[base + ic], in_qp) * deq(w[((oc * kh + ky) * kw + kx) * s.c + ic], w_qp);
                            }
                        }
                    }
                }
                out.push(acc.clamp(lo, hi));
            }
        }
    }
    out
}

/// Largest distance between the dequantized kernel output and the real
/// reference, in output quanta.
pub fn max_quanta_error(got: &Tensor, real: &[f64]) -> f64 {
    let qp = got.qp().unwrap();
    got.as_i8()
        .unwrap()
        .iter()
        .zip(real)
        .map(|(&q, &r)| (f64::from(dequantize(q, qp)) - r).abs() / f64::from(qp.scale))
        .fold(0.0, f64::max)
}

/// `acc * M + zp` evaluated as an exact rational with ties away from zero.
pub fn requantize_exact(acc: i32, fm: FixedMul, zp: i32) -> i8 {
    let num = i128::from(acc) * i128::from(fm.multiplier);
    let den = 1i128 << (31 + fm.right_shift);
    let q = num.abs() / den;
    let r = num.abs() % den;
    let mag = if 2 * r >= den { q + 1 } else { q };
    let v = if num < 0 { -mag } else { mag } + i128::from(zp);
    v.clamp(-128, 127) as i8
}

/// Bit-at-a-time CRC-16, polynomial 0x1021, initial value 0xFFFF.
pub fn crc16_bitwise(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in bytes {
        crc ^= u16::from(b) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

/// Bit-at-a-time reflected CRC-32 (polynomial 0xEDB88320).
pub fn crc32_bitwise(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

/// Cheap two-channel model used where the reference model would be slow.
pub fn tiny_arch() -> Vec<LayerDesc> {
    vec![
        LayerDesc::Conv {
            kernel: 3,
            stride: 4,
            out_channels: 4,
        },
        LayerDesc::Depthwise { kernel: 3, stride: 4 },
        LayerDesc::Flatten,
        LayerDesc::Dense { out_features: 8 },
        LayerDesc::Output { out_features: 2 },
    ]
}

pub fn tiny_model(seed: u64) -> Model {
    build_model((96, 96, 2), &tiny_arch(), seed, &PipelineConfig::default()).unwrap()
}

/// One-channel input with the grid appended by a CONCAT_GRID layer.
pub fn tiny_concat_model(seed: u64) -> Model {
    let mut arch = vec![LayerDesc::ConcatGrid];
    arch.extend(tiny_arch());
    build_model((96, 96, 1), &arch, seed, &PipelineConfig::default()).unwrap()
}

/// Replaces every weight with zero and sets the output bias.
pub fn zero_weights(mut m: Model, out_bias: &[f32]) -> Model {
    let last = m.layers.len() - 1;
    for (i, layer) in m.layers.iter_mut().enumerate() {
        match &mut layer.op {
            LayerOp::Conv2d { weights, .. }
            | LayerOp::DepthwiseConv2d { weights, .. }
            | LayerOp::FcS8 { weights, .. } => {
                let qp = weights.qp().unwrap();
                *weights = Tensor::int8(weights.dims().to_vec(), vec![0; weights.len()], qp).unwrap();
            }
            LayerOp::FcReal { weights, bias } => {
                assert_eq!(i, last);
                *weights = Tensor::real32(weights.dims().to_vec(), vec![0.0; weights.len()]).unwrap();
                *bias = Tensor::real32(vec![out_bias.len()], out_bias.to_vec()).unwrap();
            }
            LayerOp::Flatten | LayerOp::ConcatGrid => {}
        }
    }
    m
}

pub fn random_frame(rng: &mut ChaCha8Rng, width: usize, height: usize, format: PixelFormat) -> Image {
    let n = width * height * format.channels();
    // Mix smooth gradients with noise so crops see some structure.
    let (gx, gy) = (rng.gen_range(0..4u32), rng.gen_range(0..4u32));
    let noise = rng.gen_range(0..=255u32);
    let pixels = (0..n)
        .map(|i| {
            let p = i / format.channels();
            let (x, y) = ((p % width) as u32, (p / width) as u32);
            let n = if noise == 0 { 0 } else { rng.gen_range(0..=noise) };
            ((x * gx + y * gy + n) % 256) as u8
        })
        .collect();
    Image::new(width, height, format, pixels).unwrap()
}

pub fn random_input(rng: &mut ChaCha8Rng, m: &Model) -> Tensor {
    let spec = &m.input;
    Tensor::int8(spec.dims.clone(), random_i8(rng, spec.elements()), spec.qp.unwrap()).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Conv,
    Depthwise,
    Dense,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SweepStats {
    pub cases: usize,
    pub worst_quanta: f64,
    pub outputs: usize,
    /// Outputs strictly inside the activation clamp.
    pub interior: usize,
}

impl SweepStats {
    pub fn interior_fraction(&self) -> f64 {
        self.interior as f64 / self.outputs.max(1) as f64
    }
}

/// Random dense problem expressed as a 1x1 convolution over a 1x1xN input,
/// which `conv_real` can evaluate directly.
pub fn random_dense_case(rng: &mut ChaCha8Rng) -> ConvCase {
    let inf = rng.gen_range(1..=64);
    let outf = rng.gen_range(1..=16);
    let in_qp = QuantParams::new(log_uniform(rng, 1e-3, 0.5) as f32, rng.gen_range(-128..=127)).unwrap();
    let w_qp = QuantParams::new(log_uniform(rng, 1e-3, 0.5) as f32, 0).unwrap();
    let acc_scale = f64::from(in_qp.scale) * f64::from(w_qp.scale);
    let out_qp = QuantParams::new(
        (acc_scale * log_uniform(rng, 1.001, 5000.0)) as f32,
        rng.gen_range(-128..=127),
    )
    .unwrap();
    let lo: i8 = rng.gen_range(-128..=0);
    let hi: i8 = rng.gen_range(lo..=127);
    let (lo, hi) = if rng.gen_bool(0.5) { (-128, 127) } else { (lo, hi) };
    ConvCase {
        input: Tensor::int8(vec![1, 1, 1, inf], random_i8(rng, inf), in_qp).unwrap(),
        weights: Tensor::int8(vec![outf, 1, 1, inf], random_i8(rng, inf * outf), w_qp).unwrap(),
        bias: Tensor::int32(
            vec![outf],
            (0..outf).map(|_| rng.gen_range(-40_000..=40_000)).collect(),
            QuantParams::new(acc_scale as f32, 0).unwrap(),
        )
        .unwrap(),
        spec: ConvSpec::valid((1, 1), (1, 1)).with_clamp(lo, hi),
        out_qp,
        depthwise: false,
    }
}

/// Runs `cases` random instances of one kernel against the naive integer
/// oracle (bit-exact) and the real-arithmetic reference (within one
/// output quantum).
pub fn kernel_sweep(kind: KernelKind, cases: usize, seed: u64) -> Result<SweepStats, String> {
    use tinygaze::kernels::reference::{depthwise_conv2d_ref_int, fully_connected_ref_int};
    use tinygaze::kernels::{conv2d_ref_int, conv2d_s8, depthwise_conv2d_s8, fully_connected_s8};

    let mut r = rng(seed);
    let mut stats = SweepStats::default();
    for i in 0..cases {
        let (got, oracle, case) = match kind {
            KernelKind::Conv | KernelKind::Depthwise => {
                let dw = kind == KernelKind::Depthwise;
                let c = random_conv_case(&mut r, dw);
                let (got, oracle) = if dw {
                    (
                        depthwise_conv2d_s8(&c.input, &c.weights, &c.bias, &c.spec, c.out_qp),
                        depthwise_conv2d_ref_int(&c.input, &c.weights, &c.bias, &c.spec, c.out_qp),
                    )
                } else {
                    (
                        conv2d_s8(&c.input, &c.weights, &c.bias, &c.spec, c.out_qp),
                        conv2d_ref_int(&c.input, &c.weights, &c.bias, &c.spec, c.out_qp),
                    )
                };
                let got = got.map_err(|e| format!("case {i}: {e}"))?;
                let s = c.input.shape().unwrap();
                let p = c.spec.padding;
                let oh = (s.h + p.top + p.bottom - c.spec.kernel.0) / c.spec.stride.0 + 1;
                let ow = (s.w + p.left + p.right - c.spec.kernel.1) / c.spec.stride.1 + 1;
                if got.dims()[1..3] != [oh, ow] {
                    return Err(format!("case {i}: output dims {:?}, expected {oh}x{ow}", got.dims()));
                }
                (got, oracle.map_err(|e| format!("case {i}: {e}"))?, c)
            }
            KernelKind::Dense => {
                let c = random_dense_case(&mut r);
                let outf = c.bias.len();
                let inf = c.input.len();
                let w2 = c.weights.clone().reshaped(vec![outf, inf]).unwrap();
                let clamp = c.spec.activation_clamp;
                let got = fully_connected_s8(&c.input, &w2, &c.bias, c.out_qp, clamp)
                    .map_err(|e| format!("case {i}: {e}"))?;
                let oracle = fully_connected_ref_int(&c.input, &w2, &c.bias, c.out_qp, clamp)
                    .map_err(|e| format!("case {i}: {e}"))?;
                (got, oracle, c)
            }
        };
        if got.as_i8() != oracle.as_i8() {
            return Err(format!("case {i}: {kind:?} differs from the integer oracle: {case:?}"));
        }
        let err = max_quanta_error(&got, &conv_real(&case));
        if err > 1.0 {
            return Err(format!(
                "case {i}: {kind:?} is {err:.4} quanta from the real reference: {case:?}"
            ));
        }
        stats.worst_quanta = stats.worst_quanta.max(err);
        let (lo, hi) = case.spec.activation_clamp;
        let out = got.as_i8().unwrap();
        stats.outputs += out.len();
        stats.interior += out.iter().filter(|&&q| lo < q && q < hi).count();
        stats.cases += 1;
    }
    Ok(stats)
}
