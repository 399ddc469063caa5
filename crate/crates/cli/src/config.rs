//! Experiment configuration: a TOML file with `[data]` and `[train]` tables.

use std::fs;
use std::path::{Path, PathBuf};

use duoseg_core::data::{generate_synthetic_dataset, load_image_mask_dir, Sample, SynthConfig};
use duoseg_core::trainer::TrainConfig;
use duoseg_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        n: usize,
        resolution: usize,
        seed: u64,
        noise_level: f64,
    },
    Directory {
        image_dir: PathBuf,
        mask_dir: PathBuf,
        resolution: usize,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            n: 400,
            resolution: 64,
            seed: 0,
            noise_level: 0.1,
        }
    }
}

impl DataConfig {
    pub fn resolution(&self) -> usize {
        match self {
            DataConfig::Synthetic { resolution, .. } | DataConfig::Directory { resolution, .. } => *resolution,
        }
    }

    pub fn set_resolution(&mut self, r: usize) {
        match self {
            DataConfig::Synthetic { resolution, .. } | DataConfig::Directory { resolution, .. } => *resolution = r,
        }
    }

    pub fn load(&self) -> Result<Vec<Sample>> {
        match self {
            DataConfig::Synthetic {
                n,
                resolution,
                seed,
                noise_level,
            } => Ok(generate_synthetic_dataset(&SynthConfig {
                n: *n,
                resolution: *resolution,
                seed: *seed,
                noise_level: *noise_level,
            })?
            .samples),
            DataConfig::Directory {
                image_dir,
                mask_dir,
                resolution,
            } => load_image_mask_dir(image_dir, mask_dir, *resolution as u32),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let res = self.data.resolution();
        let m = self.train.spatial_multiple();
        if res == 0 || res % m != 0 {
            return Err(Error::config(
                "data.resolution",
                format!("{res} must be a positive multiple of {m} for the configured network depths"),
            ));
        }
        if let DataConfig::Synthetic { n, noise_level, .. } = &self.data {
            SynthConfig {
                n: *n,
                resolution: res,
                seed: 0,
                noise_level: *noise_level,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
