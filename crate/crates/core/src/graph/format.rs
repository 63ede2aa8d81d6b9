//! Binary model file.
//!
//! All integers little-endian:
//!
//! ```text
//! magic       "TTKS"
//! u16         version (1)
//! u16         layer count
//! u16         tensor count
//! u32         grid tensor index (0xFFFF_FFFF = none)
//! tensor[]    u8 kind, u8 rank, u32 dims[rank], f32 scale, i32 zero_point,
//!             u32 byte length, payload
//! layer[]     u8 kind, u16 x 10 spec fields, u32 input, u32 output,
//!             u32 weights, u32 bias
//! u32         CRC-32 (ISO-HDLC) of every preceding byte
//! ```
//!
//! Activations are tensors with an empty payload. The spec fields are
//! kernel h/w, stride h/w, padding top/bottom/left/right and the activation
//! clamp min/max as two's-complement i16.

use crc::{Crc, CRC_32_ISO_HDLC};
use thiserror::Error;

use crate::kernels::{ConvSpec, ElementKind, Padding, Tensor, TensorData};
use crate::qcore::QuantParams;

use super::{validate, Layer, LayerKind, LayerOp, Model, TensorSpec, ValidationReport};

pub const MAGIC: [u8; 4] = *b"TTKS";
pub const FORMAT_VERSION: u16 = 1;
const NONE: u32 = u32::MAX;
const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4;
const CRC32: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown layer kind {0}")]
    UnknownLayerKind(u8),
    #[error("unknown element kind {0}")]
    UnknownElementKind(u8),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("model failed validation: {0}")]
    Invalid(ValidationReport),
}

fn element_code(kind: ElementKind) -> u8 {
    match kind {
        ElementKind::Int8 => 0,
        ElementKind::Int32 => 1,
        ElementKind::Real32 => 2,
    }
}

fn element_from_code(code: u8) -> Result<ElementKind, FormatError> {
    match code {
        0 => Ok(ElementKind::Int8),
        1 => Ok(ElementKind::Int32),
        2 => Ok(ElementKind::Real32),
        other => Err(FormatError::UnknownElementKind(other)),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn tensor_header(&mut self, dims: &[usize], kind: ElementKind, qp: Option<QuantParams>, byte_len: usize) {
        self.u8(element_code(kind));
        self.u8(dims.len() as u8);
        for &d in dims {
            self.u32(d as u32);
        }
        let qp = qp.unwrap_or(QuantParams {
            scale: 0.0,
            zero_point: 0,
        });
        self.f32(qp.scale);
        self.i32(qp.zero_point);
        self.u32(byte_len as u32);
    }

    fn descriptor(&mut self, spec: &TensorSpec) {
        self.tensor_header(&spec.dims, spec.kind, spec.qp, 0);
    }

    fn constant(&mut self, t: &Tensor) {
        self.tensor_header(t.dims(), t.kind(), t.qp(), t.byte_len());
        match t.data() {
            TensorData::Int8(v) => self.buf.extend(v.iter().map(|&b| b as u8)),
            TensorData::Int32(v) => v.iter().for_each(|&x| self.i32(x)),
            TensorData::Real32(v) => v.iter().for_each(|&x| self.f32(x)),
        }
    }
}

struct LayerRecord {
    kind: LayerKind,
    fields: [u16; 10],
    input: u32,
    output: u32,
    weights: u32,
    bias: u32,
}

fn spec_fields(spec: &ConvSpec) -> [u16; 10] {
    let p = spec.padding;
    [
        spec.kernel.0 as u16,
        spec.kernel.1 as u16,
        spec.stride.0 as u16,
        spec.stride.1 as u16,
        p.top as u16,
        p.bottom as u16,
        p.left as u16,
        p.right as u16,
        i16::from(spec.activation_clamp.0) as u16,
        i16::from(spec.activation_clamp.1) as u16,
    ]
}

fn clamp_fields(clamp: (i8, i8)) -> [u16; 10] {
    let mut f = [0u16; 10];
    f[8] = i16::from(clamp.0) as u16;
    f[9] = i16::from(clamp.1) as u16;
    f
}

/// Serializes a model. Tensor table order: the input descriptor, then per
/// layer its weights, bias and output descriptor, then the grid plane.
pub fn encode_model(m: &Model) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    let mut tensors = Writer { buf: Vec::new() };
    let mut count: u32 = 0;
    let mut next = || {
        count += 1;
        count - 1
    };

    tensors.descriptor(&m.input);
    let mut current = next();
    let mut records = Vec::with_capacity(m.layers.len());
    for layer in &m.layers {
        let mut weights = NONE;
        let mut bias = NONE;
        if let Some(t) = layer.weights() {
            tensors.constant(t);
            weights = next();
        }
        if let Some(t) = layer.bias() {
            tensors.constant(t);
            bias = next();
        }
        tensors.descriptor(&layer.output);
        let output = next();
        let fields = match &layer.op {
            LayerOp::Conv2d { spec, .. } | LayerOp::DepthwiseConv2d { spec, .. } => spec_fields(spec),
            LayerOp::FcS8 { activation_clamp, .. } => clamp_fields(*activation_clamp),
            _ => [0; 10],
        };
        records.push(LayerRecord {
            kind: layer.kind(),
            fields,
            input: current,
            output,
            weights,
            bias,
        });
        current = output;
    }
    let grid = match &m.grid {
        Some(g) => {
            tensors.constant(g);
            next()
        }
        None => NONE,
    };

    w.buf.extend_from_slice(&MAGIC);
    w.u16(m.version);
    w.u16(m.layers.len() as u16);
    w.u16(count as u16);
    w.u32(grid);
    w.buf.extend_from_slice(&tensors.buf);
    for r in &records {
        w.u8(r.kind.code());
        for f in r.fields {
            w.u16(f);
        }
        w.u32(r.input);
        w.u32(r.output);
        w.u32(r.weights);
        w.u32(r.bias);
    }
    let crc = CRC32.checksum(&w.buf);
    w.u32(crc);
    w.buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Either an activation descriptor or a constant.
enum Entry {
    Descriptor(TensorSpec),
    Constant(Tensor),
}

fn read_entry(r: &mut Reader<'_>) -> Result<Entry, FormatError> {
    let kind = element_from_code(r.u8()?)?;
    let rank = r.u8()? as usize;
    if !(1..=4).contains(&rank) {
        return Err(FormatError::Malformed(format!("tensor rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut elements: u64 = 1;
    for _ in 0..rank {
        let d = r.u32()?;
        if d == 0 {
            return Err(FormatError::Malformed("zero tensor dimension".into()));
        }
        elements = elements.saturating_mul(u64::from(d));
        dims.push(d as usize);
    }
    let scale = r.f32()?;
    let zero_point = r.i32()?;
    let byte_len = r.u32()? as u64;
    let qp = if kind.is_quantized() {
        let qp = QuantParams { scale, zero_point };
        qp.check().map_err(|e| FormatError::Malformed(e.to_string()))?;
        Some(qp)
    } else {
        None
    };
    let expected = elements.saturating_mul(kind.byte_width() as u64);
    if byte_len == 0 {
        if expected > u64::from(u32::MAX) {
            return Err(FormatError::Malformed("activation too large".into()));
        }
        return Ok(Entry::Descriptor(TensorSpec { dims, kind, qp }));
    }
    if byte_len != expected {
        return Err(FormatError::Malformed(format!(
            "tensor payload of {byte_len} bytes, dims {dims:?} need {expected}"
        )));
    }
    let payload = r.take(byte_len as usize)?;
    let data = match kind {
        ElementKind::Int8 => TensorData::Int8(payload.iter().map(|&b| b as i8).collect()),
        ElementKind::Int32 => TensorData::Int32(
            payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        ElementKind::Real32 => TensorData::Real32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    let t = Tensor::new(dims, data, qp).map_err(|e| FormatError::Malformed(e.to_string()))?;
    Ok(Entry::Constant(t))
}

fn decode_fields(f: [u16; 10]) -> Result<ConvSpec, FormatError> {
    let spec = ConvSpec {
        kernel: (f[0] as usize, f[1] as usize),
        stride: (f[2] as usize, f[3] as usize),
        padding: Padding {
            top: f[4] as usize,
            bottom: f[5] as usize,
            left: f[6] as usize,
            right: f[7] as usize,
        },
        activation_clamp: decode_clamp(f)?,
    };
    spec.check().map_err(|e| FormatError::Malformed(e.to_string()))?;
    Ok(spec)
}

fn decode_clamp(f: [u16; 10]) -> Result<(i8, i8), FormatError> {
    let lo = i8::try_from(f[8] as i16).map_err(|_| FormatError::Malformed("activation clamp outside int8".into()))?;
    let hi = i8::try_from(f[9] as i16).map_err(|_| FormatError::Malformed("activation clamp outside int8".into()))?;
    Ok((lo, hi))
}

/// Parses and validates a model file. Corruption anywhere after the magic
/// surfaces as a checksum mismatch before any structure is interpreted.
pub fn decode_model(bytes: &[u8]) -> Result<Model, FormatError> {
    let prefix = bytes.len().min(4);
    if bytes[..prefix] != MAGIC[..prefix] {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: HEADER_LEN + 4 - bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = CRC32.checksum(body);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let layer_count = r.u16()? as usize;
    let tensor_count = r.u16()? as usize;
    let grid_index = r.u32()?;

    let mut entries = Vec::with_capacity(tensor_count.min(1024));
    for _ in 0..tensor_count {
        entries.push(Some(read_entry(&mut r)?));
    }
    let mut records = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or(FormatError::UnknownLayerKind(code))?;
        let mut fields = [0u16; 10];
        for f in &mut fields {
            *f = r.u16()?;
        }
        records.push(LayerRecord {
            kind,
            fields,
            input: r.u32()?,
            output: r.u32()?,
            weights: r.u32()?,
            bias: r.u32()?,
        });
    }
    if r.pos != body.len() {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes before checksum",
            body.len() - r.pos
        )));
    }

    // Each entry is claimed by exactly one reference.
    let mut claim = |index: u32, what: &str| -> Result<Entry, FormatError> {
        entries
            .get_mut(index as usize)
            .and_then(Option::take)
            .ok_or_else(|| FormatError::Malformed(format!("{what} references missing tensor {index}")))
    };
    let descriptor = |e: Entry, what: &str| match e {
        Entry::Descriptor(s) => Ok(s),
        Entry::Constant(_) => Err(FormatError::Malformed(format!("{what} must be an activation"))),
    };
    let constant = |e: Entry, what: &str| match e {
        Entry::Constant(t) => Ok(t),
        Entry::Descriptor(_) => Err(FormatError::Malformed(format!("{what} must be a constant"))),
    };

    let grid = if grid_index == NONE {
        None
    } else {
        Some(constant(claim(grid_index, "grid")?, "grid")?)
    };
    let Some(first) = records.first() else {
        return Err(FormatError::Invalid(ValidationReport::single(
            None,
            "model has no layers",
        )));
    };
    let input = descriptor(claim(first.input, "model input")?, "model input")?;

    let mut layers = Vec::with_capacity(records.len());
    let mut previous_output = first.input;
    for (i, rec) in records.iter().enumerate() {
        if rec.input != previous_output {
            return Err(FormatError::Malformed(format!(
                "layer {i} does not consume the previous layer's output"
            )));
        }
        let mut tensor = |index: u32, what: &str| -> Result<Tensor, FormatError> {
            let what = format!("layer {i} {what}");
            constant(claim(index, &what)?, &what)
        };
        let op = match rec.kind {
            LayerKind::Conv2d => LayerOp::Conv2d {
                spec: decode_fields(rec.fields)?,
                weights: tensor(rec.weights, "weights")?,
                bias: tensor(rec.bias, "bias")?,
            },
            LayerKind::DepthwiseConv2d => LayerOp::DepthwiseConv2d {
                spec: decode_fields(rec.fields)?,
                weights: tensor(rec.weights, "weights")?,
                bias: tensor(rec.bias, "bias")?,
            },
            LayerKind::FcS8 => LayerOp::FcS8 {
                weights: tensor(rec.weights, "weights")?,
                bias: tensor(rec.bias, "bias")?,
                activation_clamp: decode_clamp(rec.fields)?,
            },
            LayerKind::FcReal => LayerOp::FcReal {
                weights: tensor(rec.weights, "weights")?,
                bias: tensor(rec.bias, "bias")?,
            },
            LayerKind::Flatten => LayerOp::Flatten,
            LayerKind::ConcatGrid => LayerOp::ConcatGrid,
        };
        let output = descriptor(claim(rec.output, &format!("layer {i} output"))?, "layer output")?;
        layers.push(Layer { op, output });
        previous_output = rec.output;
    }
    if entries.iter().any(Option::is_some) {
        return Err(FormatError::Malformed("unreferenced tensors in table".into()));
    }

    let model = Model {
        version,
        input,
        grid,
        layers,
    };
    let report = validate(&model);
    if !report.is_empty() {
        return Err(FormatError::Invalid(report));
    }
    Ok(model)
}
