//! `key = value` pipeline configuration files.

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pipeline(#[from] super::GazeError),
}

/// Parsed config file. Absent keys keep the QVGA defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigFile {
    pub capture_width: usize,
    pub capture_height: usize,
    pub crop_side: usize,
    pub model_path: Option<PathBuf>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let d = PipelineConfig::default();
        ConfigFile {
            capture_width: d.capture_dims.0,
            capture_height: d.capture_dims.1,
            crop_side: d.crop_side,
            model_path: None,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ConfigFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Syntax { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let number = || {
                value
                    .parse::<usize>()
                    .map_err(|_| err(format!("{key} must be a non-negative integer, got {value:?}")))
            };
            match key {
                "capture_width" => cfg.capture_width = number()?,
                "capture_height" => cfg.capture_height = number()?,
                "crop_side" => cfg.crop_side = number()?,
                "model_path" => cfg.model_path = Some(PathBuf::from(value)),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, ConfigError> {
        Ok(PipelineConfig::new(
            self.capture_width,
            self.capture_height,
            self.crop_side,
        )?)
    }
}
