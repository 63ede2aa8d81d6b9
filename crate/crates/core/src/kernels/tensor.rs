use crate::qcore::QuantParams;

use super::KernelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Int8,
    Int32,
    Real32,
}

impl ElementKind {
    pub fn byte_width(self) -> usize {
        match self {
            ElementKind::Int8 => 1,
            ElementKind::Int32 | ElementKind::Real32 => 4,
        }
    }

    pub fn is_quantized(self) -> bool {
        !matches!(self, ElementKind::Real32)
    }
}

/// Batch, height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn from_dims(dims: &[usize]) -> Option<Shape> {
        match *dims {
            [n, h, w, c] => Some(Shape { n, h, w, c }),
            _ => None,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Int8(Vec<i8>),
    Int32(Vec<i32>),
    Real32(Vec<f32>),
}

impl TensorData {
    pub fn kind(&self) -> ElementKind {
        match self {
            TensorData::Int8(_) => ElementKind::Int8,
            TensorData::Int32(_) => ElementKind::Int32,
            TensorData::Real32(_) => ElementKind::Real32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::Int8(v) => v.len(),
            TensorData::Int32(v) => v.len(),
            TensorData::Real32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense row-major tensor, channel innermost.
///
/// Dims are usually NHWC; weight matrices and bias vectors use rank 2 and 1.
/// Quantized element kinds always carry [`QuantParams`]; int32 tensors use a
/// zero point of 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
    qp: Option<QuantParams>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData, qp: Option<QuantParams>) -> Result<Self, KernelError> {
        if dims.is_empty() || dims.len() > 4 || dims.contains(&0) {
            return Err(KernelError::Dimension(format!("invalid tensor dims {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(KernelError::Dimension(format!(
                "tensor dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        match (data.kind(), qp) {
            (ElementKind::Real32, None) => {}
            (ElementKind::Real32, Some(_)) => {
                return Err(KernelError::Format("real32 tensors carry no quantization".into()))
            }
            (_, None) => {
                return Err(KernelError::Format(
                    "quantized tensor without quantization parameters".into(),
                ))
            }
            (kind, Some(q)) => {
                q.check()?;
                if kind == ElementKind::Int32 && q.zero_point != 0 {
                    return Err(KernelError::Format("int32 tensors must use zero point 0".into()));
                }
            }
        }
        Ok(Tensor { dims, data, qp })
    }

    pub fn int8(dims: Vec<usize>, data: Vec<i8>, qp: QuantParams) -> Result<Self, KernelError> {
        Tensor::new(dims, TensorData::Int8(data), Some(qp))
    }

    pub fn int32(dims: Vec<usize>, data: Vec<i32>, qp: QuantParams) -> Result<Self, KernelError> {
        Tensor::new(dims, TensorData::Int32(data), Some(qp))
    }

    pub fn real32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, KernelError> {
        Tensor::new(dims, TensorData::Real32(data), None)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn kind(&self) -> ElementKind {
        self.data.kind()
    }

    pub fn qp(&self) -> Option<QuantParams> {
        self.qp
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.kind().byte_width()
    }

    /// NHWC view; fails for tensors that are not rank 4.
    pub fn shape(&self) -> Result<Shape, KernelError> {
        Shape::from_dims(&self.dims)
            .ok_or_else(|| KernelError::Dimension(format!("expected a rank-4 tensor, got dims {:?}", self.dims)))
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::Int8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::Int32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::Real32(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub(crate) fn expect_i8(&self, what: &str) -> Result<(&[i8], QuantParams), KernelError> {
        match (&self.data, self.qp) {
            (TensorData::Int8(v), Some(qp)) => Ok((v, qp)),
            _ => Err(KernelError::Format(format!("{what} must be an int8 tensor"))),
        }
    }

    pub(crate) fn expect_i32(&self, what: &str) -> Result<(&[i32], QuantParams), KernelError> {
        match (&self.data, self.qp) {
            (TensorData::Int32(v), Some(qp)) => Ok((v, qp)),
            _ => Err(KernelError::Format(format!("{what} must be an int32 tensor"))),
        }
    }

    pub(crate) fn expect_f32(&self, what: &str) -> Result<&[f32], KernelError> {
        self.as_f32()
            .ok_or_else(|| KernelError::Format(format!("{what} must be a real32 tensor")))
    }

    /// Same data with new dims of equal element count.
    pub fn reshaped(mut self, dims: Vec<usize>) -> Result<Self, KernelError> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || dims.len() > 4 || expected != self.len() {
            return Err(KernelError::Dimension(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }
}
