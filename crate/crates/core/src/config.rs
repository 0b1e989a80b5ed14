//! Experiment configuration as a sectioned TOML file.
//!
//! Every field has a default, so an empty file is a valid configuration and
//! [`ExperimentConfig::dump_defaults`] prints the complete key set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imaging::PhantomSpec;
use crate::superpixel::ProxyParams;
use crate::training::{
    AblationConfig, LossWeights, MemoryConfig, NetworkConfig, PapcSource, ReconTrainInput, Stage,
    TrainConfig,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Synthetic phantoms from the `[phantom]` section.
    #[default]
    Phantom,
    /// A `root/{train,test}/{normal,abnormal}` PNG tree.
    Directory,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub root: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Stage-2 epochs; `epochs` when absent.
    pub recon_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub papc_source: PapcSource,
    pub recon_train_input: ReconTrainInput,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(Stage::Proxy);
        Self {
            epochs: t.epochs,
            recon_epochs: None,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            seed: t.seed,
            papc_source: t.papc_source,
            recon_train_input: t.recon_train_input,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Threshold on min-max normalised scores for ACC/F1.
    pub threshold: f64,
    /// Write per-sample anomaly-map PNGs when scoring.
    pub heatmaps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            threshold: 0.5,
            heatmaps: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub phantom: PhantomSpec,
    pub proxy: ProxyParams,
    pub memory: MemoryConfig,
    pub network: NetworkConfig,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub ablation: AblationConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn dump_defaults() -> String {
        Self::default().to_toml()
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source == DataSource::Directory && self.data.root.is_none() {
            return Err(Error::Config("data.source = \"directory\" needs data.root".into()));
        }
        if self.data.source == DataSource::Phantom {
            self.phantom.validate()?;
        }
        if self.proxy.compactness <= 0.0 || self.proxy.slic_iters == 0 {
            return Err(Error::Config("proxy.compactness must be > 0 and slic_iters >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.output.threshold) {
            return Err(Error::Config("output.threshold must lie in [0, 1]".into()));
        }
        self.memory.validate()?;
        self.network.validate()?;
        self.train_config(Stage::Proxy).validate()
    }

    pub fn train_config(&self, stage: Stage) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            stage,
            epochs: match stage {
                Stage::Proxy => t.epochs,
                Stage::Recon => t.recon_epochs.unwrap_or(t.epochs),
            },
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            seed: t.seed,
            ablation: self.ablation,
            weights: self.loss,
            papc_source: t.papc_source,
            recon_train_input: t.recon_train_input,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = ExperimentConfig::dump_defaults();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, ExperimentConfig::default());
        assert_eq!(back.hash(), ExperimentConfig::default().hash());
        assert!(text.contains("[memory]"));
    }

    #[test]
    fn documented_defaults() {
        let c = ExperimentConfig::default();
        assert_eq!((c.memory.size, c.memory.dim, c.memory.gamma), (128, 64, 0.99));
        assert_eq!((c.loss.lambda_g, c.loss.lambda_global, c.loss.lambda_local), (0.01, 0.25, 0.5));
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.proxy.superpixels_for(256, 256), 800);
        assert_eq!(c.proxy.superpixels_for(64, 64), 50);
        assert_eq!(c.proxy.compactness, 10.0);
    }

    #[test]
    fn partial_files_and_errors() {
        let c = ExperimentConfig::from_toml("[memory]\nsize = 8\n[train]\nseed = 3\n").unwrap();
        assert_eq!(c.memory.size, 8);
        assert_eq!(c.train.seed, 3);
        assert_ne!(c.hash(), ExperimentConfig::default().hash());
        assert!(matches!(ExperimentConfig::from_toml("[bogus]\n"), Err(Error::Config(_))));
        for typo in ["[memory]\nsise = 3\n", "[phantom]\nnoise = 0.1\n", "[proxy]\nmod = \"si\"\n"] {
            assert!(matches!(ExperimentConfig::from_toml(typo), Err(Error::Config(_))), "{typo}");
        }
        assert!(matches!(
            ExperimentConfig::from_toml("[train]\nlearning_rate = -1.0\n"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml("[ablation]\nuse_si_proxy = false\nuse_repairing = true\n").is_err());
    }

    #[test]
    fn recon_epochs_override() {
        let c = ExperimentConfig::from_toml("[train]\nepochs = 4\nrecon_epochs = 2\n").unwrap();
        assert_eq!(c.train_config(Stage::Proxy).epochs, 4);
        assert_eq!(c.train_config(Stage::Recon).epochs, 2);
    }
}
