use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::superpixel::ProxyMode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Proxy,
    Recon,
}

/// Which normal image a pseudo-anomaly patch is cut from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PapcSource {
    /// A different, randomly chosen training image.
    #[default]
    Other,
    /// The image whose proxy receives the patch.
    #[serde(rename = "self")]
    Itself,
}

impl FromStr for PapcSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "other" => Ok(Self::Other),
            "self" => Ok(Self::Itself),
            _ => Err(Error::arg(format!("unknown papc source '{s}' (expected other|self)"))),
        }
    }
}

impl fmt::Display for PapcSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Other => "other",
            Self::Itself => "self",
        })
    }
}

/// Proxy fed to the reconstruction module during its training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconTrainInput {
    /// Output of the frozen proxy extraction module, matching inference.
    #[default]
    Predicted,
    /// Proxy computed directly from the image.
    Slic,
}

impl FromStr for ReconTrainInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(Self::Predicted),
            "slic" => Ok(Self::Slic),
            _ => Err(Error::arg(format!(
                "unknown recon train input '{s}' (expected predicted|slic)"
            ))),
        }
    }
}

impl fmt::Display for ReconTrainInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Predicted => "predicted",
            Self::Slic => "slic",
        })
    }
}

/// Feature switches of the ablation ladder.
///
/// Without the proxy bridge the model is a single encoder-decoder trained to
/// reconstruct its own input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub use_si_proxy: bool,
    pub use_memory: bool,
    pub use_repairing: bool,
    pub score_in_latent: bool,
    pub proxy_mode: ProxyMode,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::row(8).expect("row 8 exists")
    }
}

/// Rows of the ablation ladder that are implemented.
pub const ABLATION_ROWS: [u8; 7] = [1, 3, 4, 5, 6, 7, 8];

impl AblationConfig {
    pub fn row(row: u8) -> Result<Self> {
        let (si, mem, rep, lat) = match row {
            1 => (false, false, false, false),
            3 => (false, true, false, false),
            4 => (true, false, false, false),
            5 => (true, true, false, false),
            6 => (true, false, true, false),
            7 => (true, true, true, false),
            8 => (true, true, true, true),
            2 => {
                return Err(Error::arg(
                    "ablation row 2 (soft multi-item memory) is not implemented",
                ))
            }
            _ => return Err(Error::arg(format!("no ablation row {row}"))),
        };
        Ok(Self {
            use_si_proxy: si,
            use_memory: mem,
            use_repairing: rep,
            score_in_latent: lat,
            proxy_mode: ProxyMode::Si,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_repairing && !self.use_si_proxy {
            return Err(Error::Config("use_repairing requires use_si_proxy".into()));
        }
        Ok(())
    }

    /// Short human-readable name such as `2xEncDec+SI+mem+rep+lat`.
    pub fn tag(&self) -> String {
        let mut s = String::from(if self.use_si_proxy { "2xEncDec" } else { "EncDec" });
        if self.use_si_proxy {
            s.push('+');
            s.push_str(if self.proxy_mode == ProxyMode::Si { "SI" } else { self.proxy_mode.name() });
        }
        if self.use_memory {
            s.push_str("+mem");
        }
        if self.use_repairing {
            s.push_str("+rep");
        }
        if self.score_in_latent {
            s.push_str("+lat");
        }
        s
    }

    /// Matching ladder row, if these flags form one.
    pub fn row_number(&self) -> Option<u8> {
        ABLATION_ROWS.into_iter().find(|&r| {
            let mut row = Self::row(r).expect("listed row");
            row.proxy_mode = self.proxy_mode;
            row == *self
        })
    }
}

/// Layer widths shared by both encoder-decoders, plus the discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub n_downsamples: usize,
    pub disc_base_channels: usize,
    pub disc_layers: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            n_downsamples: 4,
            disc_base_channels: 16,
            disc_layers: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.n_downsamples == 0 || self.disc_base_channels == 0 {
            return Err(Error::Config("network widths and depth must be >= 1".into()));
        }
        if self.disc_layers == 0 || self.disc_layers > 8 || self.n_downsamples > 8 {
            return Err(Error::Config("network depth out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryInit {
    /// Items sampled from encoder features of the first training batch.
    #[default]
    Warmup,
    Uniform,
}

/// Memory size `k`, item dimension `d` (also the latent width) and EMA decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub size: usize,
    pub dim: usize,
    pub gamma: f64,
    pub init: MemoryInit,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            size: 128,
            dim: 64,
            gamma: 0.99,
            init: MemoryInit::Warmup,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.dim == 0 {
            return Err(Error::Config("memory size and dim must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("memory gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub ablation: AblationConfig,
    pub weights: LossWeights,
    pub papc_source: PapcSource,
    pub recon_train_input: ReconTrainInput,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.001,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            ablation: AblationConfig::default(),
            weights: LossWeights::default(),
            papc_source: PapcSource::Other,
            recon_train_input: ReconTrainInput::Predicted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        self.weights.validate()?;
        self.ablation.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_tags() {
        assert_eq!(AblationConfig::row(8).unwrap().tag(), "2xEncDec+SI+mem+rep+lat");
        assert_eq!(AblationConfig::row(1).unwrap().tag(), "EncDec");
        assert_eq!(AblationConfig::row(3).unwrap().tag(), "EncDec+mem");
        assert!(AblationConfig::row(2).is_err());
        for r in ABLATION_ROWS {
            let a = AblationConfig::row(r).unwrap();
            a.validate().unwrap();
            assert_eq!(a.row_number(), Some(r));
        }
    }

    #[test]
    fn repairing_needs_proxy() {
        let a = AblationConfig {
            use_si_proxy: false,
            use_repairing: true,
            ..AblationConfig::row(1).unwrap()
        };
        assert!(matches!(a.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn defaults() {
        let m = MemoryConfig::default();
        assert_eq!((m.size, m.dim, m.gamma), (128, 64, 0.99));
        let t = TrainConfig::new(Stage::Proxy);
        assert_eq!(t.learning_rate, 0.001);
        t.validate().unwrap();
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..t
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn flag_parsing() {
        assert_eq!("self".parse::<PapcSource>().unwrap(), PapcSource::Itself);
        assert_eq!("slic".parse::<ReconTrainInput>().unwrap(), ReconTrainInput::Slic);
        assert!("x".parse::<PapcSource>().is_err());
    }
}
