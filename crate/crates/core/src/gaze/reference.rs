//! Seeded synthetic models: the reference layer table plus a generic
//! builder that calibrates each layer's output scale on a few inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{validate, Layer, LayerOp, Model, TensorSpec, FORMAT_VERSION};
use crate::kernels::conv::PreparedConv;
use crate::kernels::fc::{dense_real, PreparedFc};
use crate::kernels::{ConvSpec, Shape, Tensor};
use crate::qcore::{dequantize, QuantParams};

use super::{grid_tensor, GazeError, PipelineConfig, INPUT_SIDE};

/// One row of an architecture table. Convolutions use "same" padding and a
/// ReLU output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv {
        kernel: usize,
        stride: usize,
        out_channels: usize,
    },
    Depthwise {
        kernel: usize,
        stride: usize,
    },
    Pointwise {
        out_channels: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    /// Full-precision output layer.
    Output {
        out_features: usize,
    },
    ConcatGrid,
}

pub fn reference_architecture() -> Vec<LayerDesc> {
    use LayerDesc::*;
    vec![
        Conv {
            kernel: 3,
            stride: 2,
            out_channels: 16,
        },
        Depthwise { kernel: 3, stride: 1 },
        Pointwise { out_channels: 32 },
        Depthwise { kernel: 3, stride: 2 },
        Pointwise { out_channels: 64 },
        Depthwise { kernel: 3, stride: 2 },
        Pointwise { out_channels: 128 },
        Depthwise { kernel: 3, stride: 2 },
        Pointwise { out_channels: 128 },
        Depthwise { kernel: 3, stride: 2 },
        Pointwise { out_channels: 128 },
        Flatten,
        Dense { out_features: 32 },
        Output { out_features: 2 },
    ]
}

const CALIBRATION_INPUTS: usize = 4;
const CALIBRATION_PERCENTILE: f64 = 0.999;
/// Largest |raw| of the uncentered output layer over the calibration set.
const OUTPUT_PEAK: f64 = 1.25;
const RELU: (i8, i8) = (-128, 127);

/// The reference model with the default pipeline's grid plane.
pub fn build_reference_model(weight_seed: u64) -> Result<Model, GazeError> {
    build_reference_model_for(weight_seed, &PipelineConfig::default())
}

pub fn build_reference_model_for(weight_seed: u64, cfg: &PipelineConfig) -> Result<Model, GazeError> {
    let side = cfg.input_side;
    build_model((side, side, 2), &reference_architecture(), weight_seed, cfg)
}

struct Builder {
    rng: ChaCha8Rng,
    spec: TensorSpec,
    /// Calibration activations entering the next layer.
    batch: Vec<Vec<i8>>,
    layers: Vec<Layer>,
}

impl Builder {
    fn qp(&self) -> QuantParams {
        self.spec.qp.expect("int8 activations carry quantization")
    }

    fn weights(&mut self, dims: Vec<usize>, fan_in: usize, out: usize) -> (Tensor, Tensor) {
        let n: usize = dims.iter().product();
        let data: Vec<i8> = (0..n).map(|_| self.rng.gen_range(-127..=127)).collect();
        let w_scale = (1.0 / (127.0 * (fan_in as f64).sqrt())) as f32;
        let w = Tensor::int8(
            dims,
            data,
            QuantParams {
                scale: w_scale,
                zero_point: 0,
            },
        )
        .expect("weight dims");
        let b_scale = (f64::from(self.qp().scale) * f64::from(w_scale)) as f32;
        let reach = ((fan_in as f64).sqrt() * 2048.0) as i32;
        let bias: Vec<i32> = (0..out).map(|_| self.rng.gen_range(-reach..=reach)).collect();
        let b = Tensor::int32(
            vec![out],
            bias,
            QuantParams {
                scale: b_scale,
                zero_point: 0,
            },
        )
        .expect("bias dims");
        (w, b)
    }

    /// Output scale covering the calibration percentile of positive values.
    fn calibrate(&self, accs: &[Vec<i32>], acc_scale: f64) -> QuantParams {
        let mut positive: Vec<i32> = accs.iter().flatten().copied().filter(|&a| a > 0).collect();
        positive.sort_unstable();
        let top = if positive.is_empty() {
            0.0
        } else {
            let rank = ((CALIBRATION_PERCENTILE * positive.len() as f64).ceil() as usize).max(1);
            f64::from(positive[rank - 1]) * acc_scale
        };
        let scale = (top / 255.0).max(acc_scale * 1.0001);
        QuantParams {
            scale: scale as f32,
            zero_point: -128,
        }
    }

    fn conv(&mut self, spec: ConvSpec, out_c: usize, depthwise: bool) -> Result<(), GazeError> {
        let shape = self
            .spec
            .shape()
            .ok_or_else(|| GazeError::Config("convolution needs a rank-4 input".into()))?;
        let (kh, kw) = spec.kernel;
        let (dims, fan_in) = if depthwise {
            (vec![1, kh, kw, shape.c], kh * kw)
        } else {
            (vec![out_c, kh, kw, shape.c], kh * kw * shape.c)
        };
        let (w, b) = self.weights(dims, fan_in, out_c);
        let in_qp = self.qp();
        let acc_scale = f64::from(in_qp.scale) * f64::from(w.qp().expect("int8").scale);
        // Any valid ratio works here; accumulators ignore the output scale.
        let provisional = QuantParams {
            scale: (acc_scale * 2.0) as f32,
            zero_point: 0,
        };
        let probe = PreparedConv::new(shape, in_qp, &w, &b, spec, provisional, depthwise)?;
        let out_shape = probe.output;
        let accs = self
            .batch
            .iter()
            .map(|x| {
                let mut acc = vec![0i32; out_shape.len()];
                probe.accumulate(x, &mut acc).map(|_| acc)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let out_qp = self.calibrate(&accs, acc_scale);
        let conv = PreparedConv::new(shape, in_qp, &w, &b, spec, out_qp, depthwise)?;
        self.batch = self
            .batch
            .iter()
            .map(|x| {
                let mut y = vec![0i8; out_shape.len()];
                conv.run(x, &mut y).map(|_| y)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let output = TensorSpec::int8(out_shape.dims().to_vec(), out_qp);
        let op = if depthwise {
            LayerOp::DepthwiseConv2d {
                spec,
                weights: w,
                bias: b,
            }
        } else {
            LayerOp::Conv2d {
                spec,
                weights: w,
                bias: b,
            }
        };
        self.push(op, output);
        Ok(())
    }

    fn dense(&mut self, out_features: usize) -> Result<(), GazeError> {
        let in_features = self.spec.elements();
        let (w, b) = self.weights(vec![out_features, in_features], in_features, out_features);
        let in_qp = self.qp();
        let acc_scale = f64::from(in_qp.scale) * f64::from(w.qp().expect("int8").scale);
        let provisional = QuantParams {
            scale: (acc_scale * 2.0) as f32,
            zero_point: 0,
        };
        let probe = PreparedFc::new(in_features, in_qp, &w, &b, provisional, RELU)?;
        let accs = self
            .batch
            .iter()
            .map(|x| {
                let mut acc = vec![0i32; out_features];
                probe.accumulate(x, &mut acc).map(|_| acc)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let out_qp = self.calibrate(&accs, acc_scale);
        let fc = PreparedFc::new(in_features, in_qp, &w, &b, out_qp, RELU)?;
        self.batch = self
            .batch
            .iter()
            .map(|x| {
                let mut y = vec![0i8; out_features];
                fc.run(x, &mut y).map(|_| y)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.push(
            LayerOp::FcS8 {
                weights: w,
                bias: b,
                activation_clamp: RELU,
            },
            TensorSpec::int8(vec![1, 1, 1, out_features], out_qp),
        );
        Ok(())
    }

    fn output(&mut self, out_features: usize) -> Result<(), GazeError> {
        let in_features = self.spec.elements();
        let qp = self.qp();
        let mut w: Vec<f32> = (0..out_features * in_features)
            .map(|_| self.rng.gen_range(-1.0..1.0))
            .collect();
        let offsets: Vec<f32> = (0..out_features).map(|_| self.rng.gen_range(-0.25..0.25)).collect();
        let zero_bias = vec![0f32; out_features];
        let mut peak = 0f64;
        let mut mean = vec![0f64; out_features];
        for x in &self.batch {
            let real: Vec<f32> = x.iter().map(|&q| dequantize(q, qp)).collect();
            let mut y = vec![0f32; out_features];
            dense_real(&real, &w, &zero_bias, &mut y)?;
            peak = y.iter().fold(peak, |p, &v| p.max(f64::from(v.abs())));
            mean.iter_mut()
                .zip(&y)
                .for_each(|(m, &v)| *m += f64::from(v) / self.batch.len() as f64);
        }
        let gain = if peak > 0.0 { OUTPUT_PEAK / peak } else { 1.0 };
        w.iter_mut().for_each(|v| *v *= gain as f32);
        // Center the calibration mean so outputs sit inside the clamp range.
        let b: Vec<f32> = offsets
            .iter()
            .zip(&mean)
            .map(|(&o, &m)| o - (gain * m) as f32)
            .collect();
        let weights = Tensor::real32(vec![out_features, in_features], w)?;
        let bias = Tensor::real32(vec![out_features], b)?;
        self.push(
            LayerOp::FcReal { weights, bias },
            TensorSpec::real32(vec![1, 1, 1, out_features]),
        );
        self.batch.clear();
        Ok(())
    }

    fn push(&mut self, op: LayerOp, output: TensorSpec) {
        self.spec = output.clone();
        self.layers.push(Layer { op, output });
    }
}

/// Builds and calibrates a chain model for an `h x w x c` int8 input.
///
/// A two-channel input carries the grid plane of `cfg` in channel 1; a
/// one-channel input gets the grid through a `ConcatGrid` row. Weights come
/// from a ChaCha8 stream seeded with `seed`.
pub fn build_model(
    input_hwc: (usize, usize, usize),
    arch: &[LayerDesc],
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<Model, GazeError> {
    let (h, w, c) = input_hwc;
    let qp = cfg.input_qp;
    let uses_grid = c == 2 || arch.contains(&LayerDesc::ConcatGrid);
    let grid = if uses_grid {
        if (h, w) != (INPUT_SIDE, INPUT_SIDE) || cfg.input_side != INPUT_SIDE {
            return Err(GazeError::Config(format!(
                "grid plane is {INPUT_SIDE}x{INPUT_SIDE}, input is {h}x{w}"
            )));
        }
        Some(grid_tensor(cfg)?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid_plane = grid.as_ref().and_then(Tensor::as_i8).map(<[i8]>::to_vec);
    let batch = (0..CALIBRATION_INPUTS)
        .map(|_| {
            let pixels: Vec<i8> = (0..h * w).map(|_| rng.gen::<i8>()).collect();
            match (c, &grid_plane) {
                (2, Some(g)) => pixels.iter().zip(g).flat_map(|(&p, &g)| [p, g]).collect(),
                _ => (0..h * w * c).map(|i| pixels[i / c]).collect(),
            }
        })
        .collect();

    let mut b = Builder {
        rng,
        spec: TensorSpec::int8(vec![1, h, w, c], qp),
        batch,
        layers: Vec::with_capacity(arch.len()),
    };
    for desc in arch {
        match *desc {
            LayerDesc::Conv {
                kernel,
                stride,
                out_channels,
            } => {
                let shape = current_shape(&b)?;
                let spec =
                    ConvSpec::same((kernel, kernel), (stride, stride), shape.h, shape.w).with_clamp(RELU.0, RELU.1);
                b.conv(spec, out_channels, false)?;
            }
            LayerDesc::Pointwise { out_channels } => {
                b.conv(
                    ConvSpec::valid((1, 1), (1, 1)).with_clamp(RELU.0, RELU.1),
                    out_channels,
                    false,
                )?;
            }
            LayerDesc::Depthwise { kernel, stride } => {
                let shape = current_shape(&b)?;
                let spec =
                    ConvSpec::same((kernel, kernel), (stride, stride), shape.h, shape.w).with_clamp(RELU.0, RELU.1);
                b.conv(spec, shape.c, true)?;
            }
            LayerDesc::Flatten => {
                let out = TensorSpec::int8(vec![1, 1, 1, b.spec.elements()], b.qp());
                b.push(LayerOp::Flatten, out);
            }
            LayerDesc::Dense { out_features } => b.dense(out_features)?,
            LayerDesc::Output { out_features } => b.output(out_features)?,
            LayerDesc::ConcatGrid => {
                let shape = current_shape(&b)?;
                let g = grid_plane.as_ref().expect("grid built above");
                b.batch = b
                    .batch
                    .iter()
                    .map(|x| x.iter().zip(g).flat_map(|(&p, &g)| [p, g]).collect())
                    .collect();
                let out = TensorSpec::int8(vec![1, shape.h, shape.w, 2], b.qp());
                b.push(LayerOp::ConcatGrid, out);
            }
        }
    }

    let model = Model {
        version: FORMAT_VERSION,
        input: TensorSpec::int8(vec![1, h, w, c], qp),
        grid,
        layers: b.layers,
    };
    let report = validate(&model);
    if !report.is_empty() {
        return Err(GazeError::Config(format!("generated model is invalid: {report}")));
    }
    Ok(model)
}

fn current_shape(b: &Builder) -> Result<Shape, GazeError> {
    b.spec
        .shape()
        .ok_or_else(|| GazeError::Config(format!("layer needs a rank-4 input, got {}", b.spec)))
}
