//! Run configuration shared by `toy-data`, `pretrain` and `train`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eventgan_core::data_io::{Dataset, Sequence, SequenceRecord};
use eventgan_core::nets::{DiscriminatorConfig, FlowNetConfig, GeneratorConfig, ReconNetConfig};
use eventgan_core::toy::{toy_dataset, ToyConfig};
use eventgan_core::training::TrainConfig;
use eventgan_core::Error;
use serde::{Deserialize, Serialize};

/// One named dataset: sequence manifests on disk, or a generated toy set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub manifests: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub flow: FlowNetConfig,
    pub recon: ReconNetConfig,
    pub datasets: Vec<DatasetSpec>,
}

impl RunConfig {
    /// Reads `path`; relative manifest paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File { path: path.display().to_string(), source: e })?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Parse { location: path.display().to_string(), message: e.message().to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            for m in &mut d.manifests {
                if m.is_relative() {
                    *m = base.join(&*m);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing run config")
    }

    /// Writes the effective config to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::File { path: dir.display().to_string(), source: e })?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::File { path: path.display().to_string(), source: e })?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let b = self.train.num_bins;
        for (name, bins) in [("generator", self.generator.num_bins), ("discriminator", self.discriminator.num_bins), ("flow", self.flow.num_bins)] {
            if bins != b {
                return Err(Error::ConfigMismatch(format!("{name}.num_bins = {bins} but train.num_bins = {b}")).into());
            }
        }
        if self.datasets.is_empty() {
            bail!(Error::InvalidArgument("no datasets configured".into()));
        }
        if self.datasets.len() != self.train.dataset_weights.len() {
            bail!(Error::ConfigMismatch(format!(
                "{} datasets but {} dataset_weights",
                self.datasets.len(),
                self.train.dataset_weights.len()
            )));
        }
        for d in &self.datasets {
            if d.manifests.is_empty() == d.toy.is_none() {
                bail!(Error::InvalidArgument(format!("dataset {:?} needs exactly one of `manifests` or `toy`", d.name)));
            }
        }
        Ok(())
    }

    pub fn load_datasets(&self) -> Result<Vec<Dataset>> {
        self.datasets
            .iter()
            .map(|d| {
                let sequences = match &d.toy {
                    Some(toy) => toy_dataset(toy)?,
                    None => d
                        .manifests
                        .iter()
                        .map(|m| Sequence::load(&SequenceRecord::load(m)?))
                        .collect::<eventgan_core::Result<Vec<_>>>()?,
                };
                Ok(Dataset { name: d.name.clone(), sequences })
            })
            .collect()
    }

    /// Applies `--seed` to training and every toy dataset.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        for (k, d) in self.datasets.iter_mut().enumerate() {
            if let Some(t) = d.toy.as_mut() {
                t.seed = seed.wrapping_add(k as u64);
            }
        }
    }
}
