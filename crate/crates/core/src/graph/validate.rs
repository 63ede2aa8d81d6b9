use std::fmt;

use crate::kernels::conv::PreparedConv;
use crate::kernels::fc::PreparedFc;
use crate::kernels::{ElementKind, Shape, Tensor};

use super::{Layer, LayerKind, LayerOp, Model, TensorSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending layer, if the finding is about one.
    pub layer: Option<usize>,
    pub message: String,
}

/// Every problem found in a model; empty means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn single(layer: Option<usize>, message: impl Into<String>) -> Self {
        ValidationReport {
            violations: vec![Violation {
                layer,
                message: message.into(),
            }],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, layer: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            layer,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            match v.layer {
                Some(l) => write!(f, "layer {l}: {}", v.message)?,
                None => f.write_str(&v.message)?,
            }
        }
        Ok(())
    }
}

fn label(m: &Model, i: usize) -> String {
    if i == 0 {
        "model input".to_string()
    } else {
        format!("layer {} ({})", i - 1, m.layers[i - 1].kind().name())
    }
}

fn describe(i: usize, layer: &Layer) -> String {
    format!("layer {i} ({})", layer.kind().name())
}

/// Checks chain shape compatibility, quantization completeness, the
/// terminal full-precision layer rule and accumulator bounds.
pub fn validate(m: &Model) -> ValidationReport {
    let mut report = ValidationReport::default();
    if m.layers.is_empty() {
        report.push(None, "model has no layers");
        return report;
    }
    if m.input.kind != ElementKind::Int8 || m.input.qp.is_none() {
        report.push(None, "model input must be a quantized int8 tensor");
    }
    match (m.input.shape(), m.input.qp) {
        (None, _) => report.push(None, format!("model input {} must be rank 4", m.input)),
        // Without an in-graph concat the grid rides in the input's last channel.
        (Some(shape), Some(qp)) if m.grid.is_some() && m.layers[0].kind() != LayerKind::ConcatGrid => {
            if shape.c != 2 {
                report.push(
                    None,
                    "a stored grid plane needs a 2-channel input or a CONCAT_GRID layer",
                );
            }
            if let Err(e) = check_grid(m.grid.as_ref(), shape, qp) {
                report.push(None, e);
            }
        }
        _ => {}
    }

    let real_layers: Vec<usize> = m
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind() == LayerKind::FcReal)
        .map(|(i, _)| i)
        .collect();
    match real_layers.as_slice() {
        [] => report.push(None, "model needs exactly one full-precision output layer"),
        [only] if *only == m.layers.len() - 1 => {}
        [only] => report.push(Some(*only), "full-precision layer must be terminal"),
        _ => report.push(None, "model has more than one full-precision layer"),
    }

    for (i, layer) in m.layers.iter().enumerate() {
        let input = m.layer_input(i);
        let expected = match expected_output(m, i, layer, input) {
            Ok(spec) => spec,
            Err(msg) => {
                report.push(Some(i), msg);
                continue;
            }
        };
        if expected.dims != layer.output.dims {
            report.push(
                Some(i),
                format!(
                    "{} consumes {} from {} and produces {:?}, but declares output {:?}",
                    describe(i, layer),
                    input,
                    label(m, i),
                    expected.dims,
                    layer.output.dims
                ),
            );
        }
        if expected.kind != layer.output.kind {
            report.push(
                Some(i),
                format!("{} output must be {:?}", describe(i, layer), expected.kind),
            );
        }
        if layer.output.kind.is_quantized() {
            match layer.output.qp {
                None => report.push(Some(i), format!("{} output lacks quantization", describe(i, layer))),
                Some(qp) => {
                    if let Err(e) = qp.check() {
                        report.push(Some(i), format!("{} output quantization: {e}", describe(i, layer)));
                    }
                    // Pass-through layers keep their input's quantization.
                    if let Some(want) = expected.qp {
                        if want != qp {
                            report.push(
                                Some(i),
                                format!("{} must keep its input quantization", describe(i, layer)),
                            );
                        }
                    }
                }
            }
        } else if layer.output.qp.is_some() {
            report.push(
                Some(i),
                format!("{} real output carries quantization", describe(i, layer)),
            );
        }
    }
    report
}

fn int8_input(input: &TensorSpec, what: &str) -> Result<crate::qcore::QuantParams, String> {
    match (input.kind, input.qp) {
        (ElementKind::Int8, Some(qp)) => Ok(qp),
        _ => Err(format!("{what} needs an int8 input, got {input}")),
    }
}

/// Output implied by the layer's operands and its input; `qp` is set only
/// where the output quantization is forced.
fn expected_output(m: &Model, i: usize, layer: &Layer, input: &TensorSpec) -> Result<TensorSpec, String> {
    let name = describe(i, layer);
    let out_qp = layer.output.qp;
    let kernel_err = |e: crate::kernels::KernelError| {
        let producer = label(m, i);
        format!("{name} is incompatible with {producer} output {input}: {e}")
    };
    match &layer.op {
        LayerOp::Conv2d { spec, weights, bias } | LayerOp::DepthwiseConv2d { spec, weights, bias } => {
            let in_qp = int8_input(input, &name)?;
            let shape = input.shape().ok_or_else(|| format!("{name} needs a rank-4 input"))?;
            let out_qp = out_qp.ok_or_else(|| format!("{name} output lacks quantization"))?;
            let depthwise = layer.kind() == LayerKind::DepthwiseConv2d;
            let conv = PreparedConv::new(shape, in_qp, weights, bias, *spec, out_qp, depthwise).map_err(kernel_err)?;
            Ok(TensorSpec {
                dims: conv.output.dims().to_vec(),
                kind: ElementKind::Int8,
                qp: None,
            })
        }
        LayerOp::FcS8 {
            weights,
            bias,
            activation_clamp,
        } => {
            let in_qp = int8_input(input, &name)?;
            let out_qp = out_qp.ok_or_else(|| format!("{name} output lacks quantization"))?;
            let fc = PreparedFc::new(input.elements(), in_qp, weights, bias, out_qp, *activation_clamp)
                .map_err(kernel_err)?;
            Ok(TensorSpec {
                dims: vec![1, 1, 1, fc.out_features],
                kind: ElementKind::Int8,
                qp: None,
            })
        }
        LayerOp::FcReal { weights, bias } => {
            int8_input(input, &name)?;
            let (w, b) = match (weights.as_f32(), bias.as_f32()) {
                (Some(w), Some(b)) => (w, b),
                _ => return Err(format!("{name} weights and bias must be real32")),
            };
            let out = match *weights.dims() {
                [out, inp] if inp == input.elements() => out,
                _ => {
                    return Err(format!(
                        "{name} weights {:?} do not match {} output {input}",
                        weights.dims(),
                        label(m, i)
                    ))
                }
            };
            if b.len() != out || w.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(format!("{name} bias must have {out} finite entries"));
            }
            Ok(TensorSpec::real32(vec![1, 1, 1, out]))
        }
        LayerOp::Flatten => {
            int8_input(input, &name)?;
            Ok(TensorSpec {
                dims: vec![1, 1, 1, input.elements()],
                kind: ElementKind::Int8,
                qp: input.qp,
            })
        }
        LayerOp::ConcatGrid => {
            let in_qp = int8_input(input, &name)?;
            if i != 0 {
                return Err(format!("{name} must be the first layer"));
            }
            let shape = input.shape().ok_or_else(|| format!("{name} needs a rank-4 input"))?;
            if shape.n != 1 || shape.c != 1 {
                return Err(format!("{name} needs a 1xHxWx1 input, got {input}"));
            }
            check_grid(m.grid.as_ref(), shape, in_qp).map_err(|e| format!("{name}: {e}"))?;
            Ok(TensorSpec {
                dims: vec![1, shape.h, shape.w, 2],
                kind: ElementKind::Int8,
                qp: Some(in_qp),
            })
        }
    }
}

fn check_grid(grid: Option<&Tensor>, shape: Shape, qp: crate::qcore::QuantParams) -> Result<(), String> {
    let grid = grid.ok_or("model stores no grid plane")?;
    if grid.dims() != [1, shape.h, shape.w, 1] || grid.as_i8().is_none() {
        return Err(format!(
            "grid plane {:?} must be int8 1x{}x{}x1",
            grid.dims(),
            shape.h,
            shape.w
        ));
    }
    if grid.qp() != Some(qp) {
        return Err("grid plane must share the input quantization".into());
    }
    Ok(())
}
