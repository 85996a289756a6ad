use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stlf::data::DatasetConfig;
use stlf::models::ModelSpec;
use stlf::training::{GridSpec, TrainConfig};
use stlf::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Root of caches and run directories.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub plots: bool,
    /// Test windows kept for plotting.
    #[serde(default = "first_day")]
    pub plot_days: Vec<usize>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn yes() -> bool {
    true
}

fn first_day() -> Vec<usize> {
    vec![0]
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output(),
            plots: true,
            plot_days: first_day(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub report: ReportConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate(self.dataset.n_o)?;
        self.training.validate()?;
        if let Some(g) = &self.grid {
            if g.is_empty() {
                return Err(Error::Config("grid has no points".into()));
            }
            for p in g.points() {
                self.model.with_point(&p).validate(self.dataset.n_o)?;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Short content hash of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Config(e.to_string()))?;
        let digest = Sha256::digest(&json);
        Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.report
            .output_dir
            .join("cache")
            .join(format!("{}-{}.csv", self.dataset.name, self.dataset.pipeline_hash()))
    }
}
