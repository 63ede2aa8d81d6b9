//! Blue-dot overlay written as binary PPM.

use std::io::{self, Write};
use std::path::Path;

use crate::gaze::GazeEstimate;
use crate::kernels::{Image, PixelFormat};

pub const DOT_COLOR: [u8; 3] = [0, 0, 255];

/// Physical screen layout. `camera_origin` is the camera position in cm
/// from the screen's top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayGeometry {
    pub screen_w_cm: f32,
    pub screen_h_cm: f32,
    pub camera_origin: (f32, f32),
}

impl Default for OverlayGeometry {
    /// A 31 x 17.4 cm laptop panel with the camera at top center.
    fn default() -> Self {
        OverlayGeometry {
            screen_w_cm: 31.0,
            screen_h_cm: 17.4,
            camera_origin: (15.5, 0.0),
        }
    }
}

impl OverlayGeometry {
    pub fn check(&self) -> io::Result<()> {
        let ok = |v: f32| v.is_finite() && v > 0.0;
        if !(ok(self.screen_w_cm)
            && ok(self.screen_h_cm)
            && self.camera_origin.0.is_finite()
            && self.camera_origin.1.is_finite())
        {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("invalid overlay geometry {self:?}"),
            ));
        }
        Ok(())
    }

    /// Pixel under a gaze point. Gaze x grows to the right and y grows
    /// upward from the camera; screen y grows downward.
    pub fn to_pixel(&self, est: &GazeEstimate, width: usize, height: usize) -> (usize, usize) {
        let sx = self.camera_origin.0 + est.x_cm;
        let sy = self.camera_origin.1 - est.y_cm;
        let map = |pos: f32, extent: f32, pixels: usize| {
            let p = (pos / extent * pixels as f32).floor();
            if p.is_nan() {
                0
            } else {
                p.clamp(0.0, (pixels - 1) as f32) as usize
            }
        };
        (map(sx, self.screen_w_cm, width), map(sy, self.screen_h_cm, height))
    }
}

/// Radius of the drawn disc: 2% of the image width, at least 3 px.
pub fn dot_radius(width: usize) -> usize {
    ((0.02 * width as f64).round() as usize).max(3)
}

fn to_rgb(frame: &Image) -> Vec<u8> {
    match frame.format() {
        PixelFormat::Rgb888 => frame.pixels().to_vec(),
        PixelFormat::Gray8 => frame.pixels().iter().flat_map(|&g| [g, g, g]).collect(),
    }
}

/// RGB copy of `frame` with a filled disc at `center`.
pub fn draw_dot(frame: &Image, center: (usize, usize), radius: usize) -> Image {
    let (w, h) = (frame.width(), frame.height());
    let mut rgb = to_rgb(frame);
    let r = radius as i64;
    let (cx, cy) = (center.0 as i64, center.1 as i64);
    for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
            if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                let i = 3 * (y as usize * w + x as usize);
                rgb[i..i + 3].copy_from_slice(&DOT_COLOR);
            }
        }
    }
    Image::rgb(w, h, rgb).expect("same dims as the source frame")
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let rgb = to_rgb(img);
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&rgb);
    out
}

/// Writes the frame with a blue dot at the estimated gaze point. Returns
/// the dot center in pixels.
pub fn host_overlay(
    frame: &Image,
    est: &GazeEstimate,
    geo: &OverlayGeometry,
    out_path: &Path,
) -> io::Result<(usize, usize)> {
    geo.check()?;
    let center = geo.to_pixel(est, frame.width(), frame.height());
    let drawn = draw_dot(frame, center, dot_radius(frame.width()));
    let mut file = std::fs::File::create(out_path)?;
    file.write_all(&encode_ppm(&drawn))?;
    file.flush()?;
    Ok(center)
}
