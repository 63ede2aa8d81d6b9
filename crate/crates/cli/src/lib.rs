//! Shared plumbing for the command-line tools.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tinygaze::gaze::{ConfigFile, PipelineConfig};
use tinygaze::graph::Engine;
use tinygaze::kernels::Image;
use tinygaze::wire::OverlayGeometry;

/// Logging to stderr; `GAZE_LOG` takes env_logger filter syntax.
pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GAZE_LOG", "warn")).init();
}

/// Decodes PNG, JPEG or PNM. Grayscale files stay single-channel.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let decoded = if img.color().has_color() {
        Image::rgb(w, h, img.to_rgb8().into_raw())
    } else {
        Image::gray(w, h, img.to_luma8().into_raw())
    };
    Ok(decoded?)
}

/// Image files in `dir`, sorted by name.
pub fn load_frames(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or("")
                .to_ascii_lowercase();
            matches!(ext.as_str(), "png" | "jpg" | "jpeg" | "ppm" | "pgm" | "pnm")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG, JPEG or PNM frames in {}", dir.display());
    }
    paths.iter().map(|p| load_image(p)).collect()
}

pub fn load_engine(path: &Path) -> Result<Engine> {
    let bytes = std::fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    Engine::from_bytes(&bytes).with_context(|| format!("loading model {}", path.display()))
}

/// Pipeline settings from a config file, or the center square of
/// `frame_dims` when there is none.
pub fn pipeline_config(config: Option<&Path>, frame_dims: Option<(usize, usize)>) -> Result<PipelineConfig> {
    if let Some(path) = config {
        return Ok(ConfigFile::load(path)?.pipeline()?);
    }
    Ok(match frame_dims {
        Some((w, h)) => PipelineConfig::for_frame(w, h)?,
        None => PipelineConfig::default(),
    })
}

fn pair(text: &str, sep: char) -> Result<(f32, f32)> {
    let (a, b) = text
        .split_once(sep)
        .with_context(|| format!("expected two numbers separated by '{sep}', got {text:?}"))?;
    let num = |s: &str| s.trim().parse::<f32>().with_context(|| format!("not a number: {s:?}"));
    Ok((num(a)?, num(b)?))
}

/// `31x17.4` style screen size in centimeters.
pub fn parse_screen_cm(text: &str) -> Result<(f32, f32)> {
    let (w, h) = pair(&text.to_ascii_lowercase(), 'x')?;
    if !(w > 0.0 && h > 0.0) {
        bail!("screen size must be positive, got {text:?}");
    }
    Ok((w, h))
}

/// `15.5,0` style camera position in centimeters.
pub fn parse_origin_cm(text: &str) -> Result<(f32, f32)> {
    pair(text, ',')
}

pub fn overlay_geometry(screen: Option<(f32, f32)>, origin: Option<(f32, f32)>) -> OverlayGeometry {
    let mut geo = OverlayGeometry::default();
    if let Some((w, h)) = screen {
        geo.screen_w_cm = w;
        geo.screen_h_cm = h;
        // Keep the camera at top center unless told otherwise.
        geo.camera_origin = (w / 2.0, 0.0);
    }
    if let Some(o) = origin {
        geo.camera_origin = o;
    }
    geo
}
