//! Model container: layer chain, binary format, validation, cost counting,
//! static arena planning and execution.

mod arena;
mod count;
mod exec;
mod format;
mod validate;

use crate::kernels::{ConvSpec, ElementKind, Shape, Tensor};
use crate::qcore::QuantParams;

pub use arena::{plan_arena, plan_arena_with_budget, ArenaPlan, PlanError, ARENA_BUDGET};
pub use count::{count_macs, count_params, layer_costs, LayerCost};
pub use exec::{execute, execute_in, execute_unplanned, Arena, Engine, ExecError};
pub use format::{decode_model, encode_model, FormatError, FORMAT_VERSION, MAGIC};
pub use validate::{validate, ValidationReport, Violation};

/// Shape, element kind and quantization of an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub dims: Vec<usize>,
    pub kind: ElementKind,
    pub qp: Option<QuantParams>,
}

impl TensorSpec {
    pub fn int8(dims: Vec<usize>, qp: QuantParams) -> Self {
        TensorSpec {
            dims,
            kind: ElementKind::Int8,
            qp: Some(qp),
        }
    }

    pub fn real32(dims: Vec<usize>) -> Self {
        TensorSpec {
            dims,
            kind: ElementKind::Real32,
            qp: None,
        }
    }

    pub fn of(t: &Tensor) -> Self {
        TensorSpec {
            dims: t.dims().to_vec(),
            kind: t.kind(),
            qp: t.qp(),
        }
    }

    pub fn elements(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.elements() * self.kind.byte_width()
    }

    pub fn shape(&self) -> Option<Shape> {
        Shape::from_dims(&self.dims)
    }
}

impl std::fmt::Display for TensorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let dims: Vec<String> = self.dims.iter().map(ToString::to_string).collect();
        write!(f, "{} {:?}", dims.join("x"), self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    DepthwiseConv2d,
    FcS8,
    FcReal,
    Flatten,
    ConcatGrid,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv2d => 1,
            LayerKind::DepthwiseConv2d => 2,
            LayerKind::FcS8 => 3,
            LayerKind::FcReal => 4,
            LayerKind::Flatten => 5,
            LayerKind::ConcatGrid => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => LayerKind::Conv2d,
            2 => LayerKind::DepthwiseConv2d,
            3 => LayerKind::FcS8,
            4 => LayerKind::FcReal,
            5 => LayerKind::Flatten,
            6 => LayerKind::ConcatGrid,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "CONV2D",
            LayerKind::DepthwiseConv2d => "DWCONV2D",
            LayerKind::FcS8 => "FC_S8",
            LayerKind::FcReal => "FC_REAL",
            LayerKind::Flatten => "FLATTEN",
            LayerKind::ConcatGrid => "CONCAT_GRID",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Conv2d {
        spec: ConvSpec,
        weights: Tensor,
        bias: Tensor,
    },
    DepthwiseConv2d {
        spec: ConvSpec,
        weights: Tensor,
        bias: Tensor,
    },
    FcS8 {
        weights: Tensor,
        bias: Tensor,
        activation_clamp: (i8, i8),
    },
    /// Dequantizes its int8 input and applies a real-valued dense layer.
    FcReal {
        weights: Tensor,
        bias: Tensor,
    },
    Flatten,
    /// Appends the model's stored grid plane as a second channel.
    ConcatGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub op: LayerOp,
    pub output: TensorSpec,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self.op {
            LayerOp::Conv2d { .. } => LayerKind::Conv2d,
            LayerOp::DepthwiseConv2d { .. } => LayerKind::DepthwiseConv2d,
            LayerOp::FcS8 { .. } => LayerKind::FcS8,
            LayerOp::FcReal { .. } => LayerKind::FcReal,
            LayerOp::Flatten => LayerKind::Flatten,
            LayerOp::ConcatGrid => LayerKind::ConcatGrid,
        }
    }

    pub fn weights(&self) -> Option<&Tensor> {
        match &self.op {
            LayerOp::Conv2d { weights, .. }
            | LayerOp::DepthwiseConv2d { weights, .. }
            | LayerOp::FcS8 { weights, .. }
            | LayerOp::FcReal { weights, .. } => Some(weights),
            LayerOp::Flatten | LayerOp::ConcatGrid => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match &self.op {
            LayerOp::Conv2d { bias, .. }
            | LayerOp::DepthwiseConv2d { bias, .. }
            | LayerOp::FcS8 { bias, .. }
            | LayerOp::FcReal { bias, .. } => Some(bias),
            LayerOp::Flatten | LayerOp::ConcatGrid => None,
        }
    }

    pub fn conv_spec(&self) -> Option<&ConvSpec> {
        match &self.op {
            LayerOp::Conv2d { spec, .. } | LayerOp::DepthwiseConv2d { spec, .. } => Some(spec),
            _ => None,
        }
    }
}

/// A sequential network. Layer `i` consumes the output of layer `i - 1`
/// (the model input for `i == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub version: u16,
    pub input: TensorSpec,
    /// Constant grid-embedding plane, `1 x H x W x 1` int8.
    pub grid: Option<Tensor>,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn output(&self) -> Option<&TensorSpec> {
        self.layers.last().map(|l| &l.output)
    }

    /// Input spec of layer `i`.
    pub fn layer_input(&self, i: usize) -> &TensorSpec {
        if i == 0 {
            &self.input
        } else {
            &self.layers[i - 1].output
        }
    }

    /// Every activation in execution order: the model input followed by
    /// each layer's output.
    pub fn activations(&self) -> impl Iterator<Item = &TensorSpec> {
        std::iter::once(&self.input).chain(self.layers.iter().map(|l| &l.output))
    }
}
