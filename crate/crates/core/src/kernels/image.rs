//! Camera-frame preprocessing: grayscale, center crop, bilinear resize and
//! input quantization. All integer arithmetic, exact rounding.

use crate::qcore::{quantize, QuantParams};

use super::{KernelError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelFormat {
    Gray8,
    Rgb888,
}

impl PixelFormat {
    pub fn channels(self) -> usize {
        match self {
            PixelFormat::Gray8 => 1,
            PixelFormat::Rgb888 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    format: PixelFormat,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, format: PixelFormat, pixels: Vec<u8>) -> Result<Self, KernelError> {
        if width == 0 || height == 0 {
            return Err(KernelError::Dimension(format!("image of size {width}x{height}")));
        }
        let expected = width * height * format.channels();
        if pixels.len() != expected {
            return Err(KernelError::Dimension(format!(
                "{width}x{height} {format:?} needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            format,
            pixels,
        })
    }

    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, KernelError> {
        Image::new(width, height, PixelFormat::Gray8, pixels)
    }

    pub fn rgb(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, KernelError> {
        Image::new(width, height, PixelFormat::Rgb888, pixels)
    }

    pub fn filled(width: usize, height: usize, format: PixelFormat, value: u8) -> Result<Self, KernelError> {
        Image::new(width, height, format, vec![value; width * height * format.channels()])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn format(&self) -> PixelFormat {
        self.format
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Pixel bytes at (x, y): one byte for gray, three for RGB.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.format.channels();
        let at = (y * self.width + x) * c;
        &self.pixels[at..at + c]
    }
}

/// BT.601 luma: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn rgb_to_gray(img: &Image) -> Result<Image, KernelError> {
    if img.format != PixelFormat::Rgb888 {
        return Err(KernelError::Format("rgb_to_gray expects an RGB888 image".into()));
    }
    let gray = img
        .pixels
        .chunks_exact(3)
        .map(|p| {
            // Weights sum to 1000, so the result never exceeds 255.
            let sum = 299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]);
            ((sum + 500) / 1000) as u8
        })
        .collect();
    Image::gray(img.width, img.height, gray)
}

/// Offsets of a centered `side` x `side` window.
pub fn center_offsets(width: usize, height: usize, side: usize) -> Result<(usize, usize), KernelError> {
    if side == 0 || side > width.min(height) {
        return Err(KernelError::Dimension(format!(
            "crop side {side} does not fit a {width}x{height} frame"
        )));
    }
    Ok(((width - side) / 2, (height - side) / 2))
}

pub fn center_crop(img: &Image, side: usize) -> Result<Image, KernelError> {
    let (x0, y0) = center_offsets(img.width, img.height, side)?;
    let c = img.format.channels();
    let mut out = Vec::with_capacity(side * side * c);
    for y in y0..y0 + side {
        let row = (y * img.width + x0) * c;
        out.extend_from_slice(&img.pixels[row..row + side * c]);
    }
    Image::new(side, side, img.format, out)
}

/// Source sampling position for one output coordinate under half-pixel
/// centers: `src = (dst + 0.5) * in / out - 0.5`, clamped to the image, as
/// (index, fractional numerator) over the denominator `2 * out`.
fn sample_axis(dst: usize, input: usize, output: usize) -> (usize, usize, u64) {
    let denom = 2 * output as i64;
    let num = (2 * dst as i64 + 1) * input as i64 - output as i64;
    if num <= 0 {
        return (0, 0, 0);
    }
    let i0 = (num / denom) as usize;
    if i0 >= input - 1 {
        return (input - 1, input - 1, 0);
    }
    (i0, i0 + 1, (num % denom) as u64)
}

/// Bilinear resize with half-pixel centers, rounded to nearest (ties up).
///
/// Interpolation weights are exact rationals, so results do not depend on
/// floating-point behavior.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image, KernelError> {
    if img.format != PixelFormat::Gray8 {
        return Err(KernelError::Format("resize_bilinear expects a GRAY8 image".into()));
    }
    if out_w == 0 || out_h == 0 {
        return Err(KernelError::Dimension(format!("resize target {out_w}x{out_h}")));
    }
    let dx = 2 * out_w as u64;
    let dy = 2 * out_h as u64;
    let denom = dx * dy;
    let cols: Vec<_> = (0..out_w).map(|x| sample_axis(x, img.width, out_w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = sample_axis(y, img.height, out_h);
        let r0 = &img.pixels[y0 * img.width..][..img.width];
        let r1 = &img.pixels[y1 * img.width..][..img.width];
        for &(x0, x1, fx) in &cols {
            let top = u64::from(r0[x0]) * (dx - fx) + u64::from(r0[x1]) * fx;
            let bottom = u64::from(r1[x0]) * (dx - fx) + u64::from(r1[x1]) * fx;
            let acc = top * (dy - fy) + bottom * fy;
            out.push(((acc + denom / 2) / denom) as u8);
        }
    }
    Image::gray(out_w, out_h, out)
}

/// Gray pixels as a `1 x H x W x 1` int8 tensor, each pixel `p` quantized as
/// the real value `p / 255`.
pub fn quantize_image(img: &Image, qp: QuantParams) -> Result<Tensor, KernelError> {
    if img.format != PixelFormat::Gray8 {
        return Err(KernelError::Format("quantize_image expects a GRAY8 image".into()));
    }
    let lut = pixel_lut(qp);
    let data = img.pixels.iter().map(|&p| lut[usize::from(p)]).collect();
    Tensor::int8(vec![1, img.height, img.width, 1], data, qp)
}

pub(crate) fn pixel_lut(qp: QuantParams) -> [i8; 256] {
    let mut lut = [0i8; 256];
    for (p, slot) in lut.iter_mut().enumerate() {
        *slot = quantize(p as f32 / 255.0, qp);
    }
    lut
}
