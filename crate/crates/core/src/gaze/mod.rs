//! The gaze pipeline: fixed center crop with a stored grid embedding,
//! integer inference, and clamped centimeter output.

mod config;
mod reference;

use std::time::Instant;

use thiserror::Error;

use crate::graph::{Arena, Engine, ExecError, Model};
use crate::kernels::image::center_offsets;
use crate::kernels::{self, Image, KernelError, PixelFormat, Tensor};
use crate::qcore::QuantParams;

pub use config::{ConfigError, ConfigFile};
pub use reference::{build_model, build_reference_model, build_reference_model_for, reference_architecture, LayerDesc};

/// Network input resolution (square).
pub const INPUT_SIDE: usize = 96;
/// Output range half-width in centimeters.
pub const GAZE_RANGE_CM: f32 = 10.0;

#[derive(Debug, Error)]
pub enum GazeError {
    #[error("frame is {got:?}, pipeline expects {expected:?}")]
    FrameDimensions {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("network produced a non-finite output {0:?}")]
    InvalidOutput((f32, f32)),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Axis-aligned rectangle in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub capture_dims: (usize, usize),
    pub crop_side: usize,
    pub input_side: usize,
    pub input_qp: QuantParams,
    /// The crop within the full frame; what the grid plane encodes.
    pub grid_rect: CropRect,
}

impl PipelineConfig {
    pub fn new(capture_width: usize, capture_height: usize, crop_side: usize) -> Result<Self, GazeError> {
        let (x, y) =
            center_offsets(capture_width, capture_height, crop_side).map_err(|e| GazeError::Config(e.to_string()))?;
        Ok(PipelineConfig {
            capture_dims: (capture_width, capture_height),
            crop_side,
            input_side: INPUT_SIDE,
            input_qp: QuantParams::image_input(),
            grid_rect: CropRect {
                x,
                y,
                width: crop_side,
                height: crop_side,
            },
        })
    }

    /// Center-square config for arbitrary frame dims.
    pub fn for_frame(width: usize, height: usize) -> Result<Self, GazeError> {
        PipelineConfig::new(width, height, width.min(height))
    }
}

impl Default for PipelineConfig {
    /// QVGA capture with a 240-pixel center square.
    fn default() -> Self {
        PipelineConfig::new(320, 240, 240).expect("default crop fits")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeEstimate {
    pub x_cm: f32,
    pub y_cm: f32,
    /// Network output before clamping.
    pub raw: (f32, f32),
    pub inference_micros: u64,
}

/// 96x96 binary plane: a cell is 255 when its center, with the grid
/// stretched over the whole frame, falls inside `crop`.
pub fn make_grid_embedding(crop: CropRect, frame_dims: (usize, usize)) -> Result<Image, GazeError> {
    let (fw, fh) = frame_dims;
    if crop.width == 0 || crop.height == 0 {
        return Err(GazeError::Config("grid crop has zero area".into()));
    }
    if fw == 0 || fh == 0 || crop.x + crop.width > fw || crop.y + crop.height > fh {
        return Err(GazeError::Config(format!(
            "crop {crop:?} lies outside the {fw}x{fh} frame"
        )));
    }
    let n = INPUT_SIDE;
    // Cell j covers center (j + 0.5) * dim / n; compare in units of 1 / (2n).
    let inside = |j: usize, start: usize, len: usize, dim: usize| {
        let center = (2 * j + 1) * dim;
        2 * n * start <= center && center < 2 * n * (start + len)
    };
    let mut pixels = Vec::with_capacity(n * n);
    for row in 0..n {
        let row_in = inside(row, crop.y, crop.height, fh);
        pixels.extend((0..n).map(|col| {
            if row_in && inside(col, crop.x, crop.width, fw) {
                255
            } else {
                0
            }
        }));
    }
    Ok(Image::gray(n, n, pixels)?)
}

/// Grid plane quantized like the image channel, as a `1 x 96 x 96 x 1`
/// tensor.
pub fn grid_tensor(cfg: &PipelineConfig) -> Result<Tensor, GazeError> {
    let plane = make_grid_embedding(cfg.grid_rect, cfg.capture_dims)?;
    Ok(kernels::quantize_image(&plane, cfg.input_qp)?)
}

/// Grayscale, center crop, resize to 96x96 and quantize; when the model
/// takes two channels, channel 1 is the model's stored grid plane.
pub fn preprocess(frame: &Image, cfg: &PipelineConfig, model: &Model) -> Result<Tensor, GazeError> {
    let got = (frame.width(), frame.height());
    if got != cfg.capture_dims {
        return Err(GazeError::FrameDimensions {
            expected: cfg.capture_dims,
            got,
        });
    }
    let gray = match frame.format() {
        PixelFormat::Gray8 => std::borrow::Cow::Borrowed(frame),
        PixelFormat::Rgb888 => std::borrow::Cow::Owned(kernels::rgb_to_gray(frame)?),
    };
    let cropped = kernels::center_crop(&gray, cfg.crop_side)?;
    let resized = kernels::resize_bilinear(&cropped, cfg.input_side, cfg.input_side)?;
    let image = kernels::quantize_image(&resized, cfg.input_qp)?;

    let channels = model.input.dims.last().copied().unwrap_or(1);
    if channels == 1 {
        return Ok(image);
    }
    let grid = model
        .grid
        .as_ref()
        .and_then(Tensor::as_i8)
        .ok_or_else(|| GazeError::Config("model expects a grid channel but stores no grid plane".into()))?;
    let pixels = image.as_i8().expect("quantize_image yields int8");
    if grid.len() != pixels.len() {
        return Err(GazeError::Config(
            "stored grid plane does not match the input size".into(),
        ));
    }
    let data = pixels.iter().zip(grid).flat_map(|(&p, &g)| [p, g]).collect();
    Ok(Tensor::int8(
        vec![1, cfg.input_side, cfg.input_side, 2],
        data,
        cfg.input_qp,
    )?)
}

/// Clamp each axis to [-1, 1] and scale to centimeters.
pub fn postprocess(raw: (f32, f32)) -> Result<GazeEstimate, GazeError> {
    if !(raw.0.is_finite() && raw.1.is_finite()) {
        return Err(GazeError::InvalidOutput(raw));
    }
    Ok(GazeEstimate {
        x_cm: GAZE_RANGE_CM * raw.0.clamp(-1.0, 1.0),
        y_cm: GAZE_RANGE_CM * raw.1.clamp(-1.0, 1.0),
        raw,
        inference_micros: 0,
    })
}

/// The first two values of a full-precision network output.
pub fn raw_output(out: &Tensor) -> Result<(f32, f32), GazeError> {
    match out.as_f32() {
        Some([x, y, ..]) => Ok((*x, *y)),
        _ => Err(GazeError::Config("network output is not a real pair".into())),
    }
}

pub fn predict(engine: &Engine, frame: &Image, cfg: &PipelineConfig) -> Result<GazeEstimate, GazeError> {
    predict_in(engine, &mut engine.new_arena(), frame, cfg)
}

/// `predict` reusing a caller-owned arena.
pub fn predict_in(
    engine: &Engine,
    arena: &mut Arena,
    frame: &Image,
    cfg: &PipelineConfig,
) -> Result<GazeEstimate, GazeError> {
    let input = preprocess(frame, cfg, engine.model())?;
    let started = Instant::now();
    let out = engine.execute_in(arena, &input)?;
    let micros = started.elapsed().as_micros() as u64;
    let mut est = postprocess(raw_output(&out)?)?;
    est.inference_micros = micros;
    Ok(est)
}
