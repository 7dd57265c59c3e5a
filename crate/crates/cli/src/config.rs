//! Run configuration: a JSON file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use patlex::discovery::DiscoveryConfig;
use patlex::grid::GranularityGrid;
use patlex::hmm::DEFAULT_GAUSSIANS;
use patlex::similarity::DEFAULT_BETA;
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub temporal_values: Vec<usize>,
    pub phonetic_values: Vec<usize>,
    pub gaussians_per_state: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            temporal_values: vec![3, 5, 7, 9, 11],
            phonetic_values: vec![50, 100, 200, 300],
            gaussians_per_state: DEFAULT_GAUSSIANS,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> patlex::Result<GranularityGrid> {
        GranularityGrid::with_gaussians(
            self.temporal_values.clone(),
            self.phonetic_values.clone(),
            self.gaussians_per_state,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub discovery: DiscoveryConfig,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            discovery: DiscoveryConfig::default(),
            beta: DEFAULT_BETA,
            manifest: None,
            run: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| patlex::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        let cfg = serde_json::from_str(&text)
            .map_err(|e| patlex::Error::Format(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Configuration stored in a run directory, if any.
    pub fn stored(run: &Path) -> Result<Option<Self>> {
        let path = run.join(CONFIG_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Self::load(&path).map(Some)
    }

    pub fn store(&self, run: &Path) -> Result<()> {
        let path = run.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).context("serializing run config")?;
        fs::write(&path, text + "\n").map_err(|e| patlex::Error::Io { path, source: e })?;
        Ok(())
    }

    pub fn validate(&self) -> patlex::Result<GranularityGrid> {
        self.discovery.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(patlex::Error::Parameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        self.grid.build()
    }
}
