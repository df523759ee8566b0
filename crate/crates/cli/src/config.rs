use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use normnet::pipeline::{PipelineConfig, SweepConfig};
use normnet::{io, shapes, ObjectModel};

/// Everything a run needs, as read from the TOML config and command-line overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    /// JSON array of object models; the built-in catalog when absent.
    pub catalog: Option<PathBuf>,
    pub workers: usize,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub sweep: SweepConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.pipeline.validate()?;
        if self.sweep.scales.iter().any(|s| !(*s > 0.0)) {
            anyhow::bail!("sweep scales must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn load_catalog(path: Option<&Path>) -> normnet::Result<Vec<ObjectModel>> {
    let models: Vec<ObjectModel> = match path {
        Some(p) => io::read_json(p)?,
        None => shapes::builtin_catalog()?,
    };
    for m in &models {
        m.validate()?;
    }
    Ok(models)
}
