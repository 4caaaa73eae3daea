use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON form of a model: raw (pre-link) parameter arrays plus enough metadata
/// to rebuild it. `alpha` is row-major with the source type as the row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub family: String,
    #[serde(rename = "K")]
    pub num_types: usize,
    pub link: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<String>,
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

impl ModelCheckpoint {
    pub(crate) fn check_header(&self, family: &str) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.family != family {
            return Err(Error::Checkpoint(format!(
                "expected family {family:?}, found {:?}",
                self.family
            )));
        }
        if self.link != "softplus" {
            return Err(Error::Checkpoint(format!(
                "unsupported link {:?}",
                self.link
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

/// JSON form of a coarse-to-fine noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCheckpoint {
    pub format_version: u32,
    #[serde(rename = "K")]
    pub num_types: usize,
    #[serde(rename = "C")]
    pub num_coarse: usize,
    pub partition: Vec<usize>,
    pub refine_probs: Vec<f64>,
    pub coarse_process: ModelCheckpoint,
}

impl NoiseCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
}
