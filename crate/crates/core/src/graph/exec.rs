//! Layer-by-layer execution, either inside a planned arena or with one heap
//! buffer per activation (the no-reuse reference path).

use std::ops::Range;

use thiserror::Error;

use crate::kernels::conv::PreparedConv;
use crate::kernels::fc::{dense_real, PreparedFc};
use crate::kernels::{self, KernelError, Tensor};
use crate::qcore::dequantize;

use super::{plan_arena, validate, ArenaPlan, FormatError, LayerOp, Model, PlanError, TensorSpec};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("input {got} does not match model input {expected}")]
    InputShape { expected: String, got: String },
    #[error("arena plan does not fit this model: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Scratch memory for one inference at a time.
#[derive(Debug, Clone)]
pub struct Arena {
    bytes: Vec<i8>,
}

impl Arena {
    pub fn for_plan(plan: &ArenaPlan) -> Self {
        Arena {
            bytes: vec![0; plan.peak_bytes],
        }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// A validated model with its arena plan; immutable and shareable.
#[derive(Debug, Clone)]
pub struct Engine {
    model: Model,
    plan: ArenaPlan,
}

impl Engine {
    pub fn new(model: Model) -> Result<Self, ExecError> {
        let report = validate(&model);
        if !report.is_empty() {
            return Err(ExecError::Invalid(report.to_string()));
        }
        let plan = plan_arena(&model)?;
        Ok(Engine { model, plan })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExecError> {
        Engine::new(super::decode_model(bytes)?)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn plan(&self) -> &ArenaPlan {
        &self.plan
    }

    pub fn new_arena(&self) -> Arena {
        Arena::for_plan(&self.plan)
    }

    pub fn execute(&self, input: &Tensor) -> Result<Tensor, ExecError> {
        execute(&self.model, &self.plan, input)
    }

    pub fn execute_in(&self, arena: &mut Arena, input: &Tensor) -> Result<Tensor, ExecError> {
        execute_in(&self.model, &self.plan, arena, input)
    }
}

fn check_input(m: &Model, input: &Tensor) -> Result<(), ExecError> {
    if TensorSpec::of(input) != m.input {
        return Err(ExecError::InputShape {
            expected: m.input.to_string(),
            got: TensorSpec::of(input).to_string(),
        });
    }
    Ok(())
}

/// Runs the model in a fresh arena.
pub fn execute(m: &Model, plan: &ArenaPlan, input: &Tensor) -> Result<Tensor, ExecError> {
    let mut arena = Arena::for_plan(plan);
    execute_in(m, plan, &mut arena, input)
}

/// Input slice and output slice of one layer, borrowed from the same arena.
fn split(bytes: &mut [i8], input: Range<usize>, output: Range<usize>) -> Result<(&[i8], &mut [i8]), ExecError> {
    if input.end <= output.start {
        let (lo, hi) = bytes.split_at_mut(output.start);
        Ok((&lo[input], &mut hi[..output.len()]))
    } else if output.end <= input.start {
        let (lo, hi) = bytes.split_at_mut(input.start);
        Ok((&hi[..input.len()], &mut lo[output]))
    } else {
        Err(ExecError::PlanMismatch(format!(
            "live activations overlap at {input:?} and {output:?}"
        )))
    }
}

fn real_output(bytes: &[i8], spec: &TensorSpec) -> Result<Tensor, ExecError> {
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0] as u8, c[1] as u8, c[2] as u8, c[3] as u8]))
        .collect();
    Ok(Tensor::real32(spec.dims.clone(), values)?)
}

/// Runs the model with every activation placed at its planned offset in
/// `arena`. Returns the final full-precision output.
pub fn execute_in(m: &Model, plan: &ArenaPlan, arena: &mut Arena, input: &Tensor) -> Result<Tensor, ExecError> {
    check_input(m, input)?;
    let sizes: Vec<usize> = m.activations().map(TensorSpec::byte_len).collect();
    if sizes != plan.sizes || plan.offsets.len() != sizes.len() {
        return Err(ExecError::PlanMismatch("activation sizes differ".into()));
    }
    if arena.bytes.len() < plan.peak_bytes {
        return Err(ExecError::PlanMismatch(format!(
            "arena of {} bytes, plan needs {}",
            arena.bytes.len(),
            plan.peak_bytes
        )));
    }
    let (x, _) = input.expect_i8("input")?;
    arena.bytes[plan.range(0)].copy_from_slice(x);

    for (i, layer) in m.layers.iter().enumerate() {
        let in_spec = m.layer_input(i);
        let (src, dst) = split(&mut arena.bytes, plan.range(i), plan.range(i + 1))?;
        run_layer(m, i, in_spec, &layer.op, &layer.output, src, dst)?;
    }
    let last = m.layers.len();
    let out_spec = &m.layers[last - 1].output;
    let bytes = &arena.bytes[plan.range(last)];
    match out_spec.kind {
        kernels::ElementKind::Real32 => real_output(bytes, out_spec),
        _ => Ok(Tensor::int8(
            out_spec.dims.clone(),
            bytes.to_vec(),
            out_spec
                .qp
                .ok_or_else(|| ExecError::Invalid("output lacks quantization".into()))?,
        )?),
    }
}

fn quant_of(spec: &TensorSpec) -> Result<crate::qcore::QuantParams, ExecError> {
    spec.qp
        .ok_or_else(|| ExecError::Invalid(format!("activation {spec} lacks quantization")))
}

fn run_layer(
    m: &Model,
    index: usize,
    in_spec: &TensorSpec,
    op: &LayerOp,
    out_spec: &TensorSpec,
    src: &[i8],
    dst: &mut [i8],
) -> Result<(), ExecError> {
    match op {
        LayerOp::Conv2d { spec, weights, bias } | LayerOp::DepthwiseConv2d { spec, weights, bias } => {
            let depthwise = matches!(op, LayerOp::DepthwiseConv2d { .. });
            let shape = in_spec
                .shape()
                .ok_or_else(|| ExecError::Invalid(format!("layer {index} input is not rank 4")))?;
            let conv = PreparedConv::new(
                shape,
                quant_of(in_spec)?,
                weights,
                bias,
                *spec,
                quant_of(out_spec)?,
                depthwise,
            )?;
            conv.run(src, dst)?;
        }
        LayerOp::FcS8 {
            weights,
            bias,
            activation_clamp,
        } => {
            let fc = PreparedFc::new(
                src.len(),
                quant_of(in_spec)?,
                weights,
                bias,
                quant_of(out_spec)?,
                *activation_clamp,
            )?;
            fc.run(src, dst)?;
        }
        LayerOp::FcReal { weights, bias } => {
            let qp = quant_of(in_spec)?;
            let x: Vec<f32> = src.iter().map(|&q| dequantize(q, qp)).collect();
            let w = weights.expect_f32("weights")?;
            let b = bias.expect_f32("bias")?;
            let mut y = vec![0f32; b.len()];
            dense_real(&x, w, b, &mut y)?;
            if dst.len() != y.len() * 4 {
                return Err(ExecError::PlanMismatch(format!("layer {index} output size")));
            }
            for (chunk, v) in dst.chunks_exact_mut(4).zip(&y) {
                for (d, b) in chunk.iter_mut().zip(v.to_le_bytes()) {
                    *d = b as i8;
                }
            }
        }
        LayerOp::Flatten => dst.copy_from_slice(src),
        LayerOp::ConcatGrid => {
            let grid = m
                .grid
                .as_ref()
                .and_then(Tensor::as_i8)
                .ok_or_else(|| ExecError::Invalid("CONCAT_GRID without a grid plane".into()))?;
            if grid.len() != src.len() || dst.len() != 2 * src.len() {
                return Err(ExecError::Invalid(format!("layer {index} grid size mismatch")));
            }
            for ((pair, &px), &g) in dst.chunks_exact_mut(2).zip(src).zip(grid) {
                pair[0] = px;
                pair[1] = g;
            }
        }
    }
    Ok(())
}

/// Reference execution through the tensor-level kernel API, one fresh
/// allocation per activation and no buffer reuse.
pub fn execute_unplanned(m: &Model, input: &Tensor) -> Result<Tensor, ExecError> {
    check_input(m, input)?;
    let mut x = input.clone();
    for (i, layer) in m.layers.iter().enumerate() {
        let out_spec = &layer.output;
        let y = match &layer.op {
            LayerOp::Conv2d { spec, weights, bias } => {
                kernels::conv2d_s8(&x, weights, bias, spec, quant_of(out_spec)?)?
            }
            LayerOp::DepthwiseConv2d { spec, weights, bias } => {
                kernels::depthwise_conv2d_s8(&x, weights, bias, spec, quant_of(out_spec)?)?
            }
            LayerOp::FcS8 {
                weights,
                bias,
                activation_clamp,
            } => kernels::fully_connected_s8(&x, weights, bias, quant_of(out_spec)?, *activation_clamp)?,
            LayerOp::FcReal { weights, bias } => {
                let (q, qp) = x.expect_i8("dense input")?;
                let real = Tensor::real32(vec![q.len()], q.iter().map(|&v| dequantize(v, qp)).collect())?;
                kernels::fully_connected_real(&real, weights, bias)?
            }
            LayerOp::Flatten => x.clone(),
            LayerOp::ConcatGrid => {
                let (q, qp) = x.expect_i8("grid input")?;
                let grid = m
                    .grid
                    .as_ref()
                    .and_then(Tensor::as_i8)
                    .ok_or_else(|| ExecError::Invalid("CONCAT_GRID without a grid plane".into()))?;
                let data = q.iter().zip(grid).flat_map(|(&a, &b)| [a, b]).collect();
                Tensor::int8(out_spec.dims.clone(), data, qp)?
            }
        };
        if y.len() != out_spec.elements() {
            return Err(ExecError::Invalid(format!("layer {i} produced {} elements", y.len())));
        }
        x = y.reshaped(out_spec.dims.clone())?;
    }
    Ok(x)
}
