//! Run configuration: one TOML file holding every knob of a campaign.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{Ablation, AttackConfig, Method};
use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::victim::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub events: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub noise_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            events: 256,
            train_per_class: 100,
            val_per_class: 25,
            test_per_class: 30,
            noise_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub methods: Vec<Method>,
    /// Extra ablation tags run for `ma-adv`, e.g. `"no-diffusion"`.
    pub ablations: Vec<String>,
    /// Number of correctly classified test samples to attack.
    pub max_samples: usize,
    /// Attack seed; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            ablations: Vec::new(),
            max_samples: 100,
            seed: None,
        }
    }
}

fn default_defenses() -> Vec<DefenseConfig> {
    vec![
        DefenseConfig::sor_default(),
        DefenseConfig::Srs { ratio: 0.5, seed: 0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub victim: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub campaign: CampaignConfig,
    #[serde(default = "default_defenses")]
    pub defenses: Vec<DefenseConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: default_out_dir(),
            dataset: DatasetConfig::default(),
            victim: TrainConfig::default(),
            attack: AttackConfig::default(),
            campaign: CampaignConfig::default(),
            defenses: default_defenses(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        let d = &self.dataset;
        if d.events < 16 {
            return Err(Error::Config("dataset.events must be at least 16".into()));
        }
        if !(0.0..1.0).contains(&d.noise_rate) {
            return Err(Error::Config("dataset.noise_rate must lie in [0, 1)".into()));
        }
        if self.victim.epochs == 0 || self.victim.batch_size == 0 || !(self.victim.lr > 0.0) {
            return Err(Error::Config("victim epochs, batch_size and lr must be positive".into()));
        }
        self.attack.validate()?;
        for tag in &self.campaign.ablations {
            Ablation::from_tag(tag).map_err(|e| Error::Config(e.to_string()))?;
        }
        for d in &self.defenses {
            match *d {
                DefenseConfig::Sor { k, alpha } if k == 0 || !(alpha > 0.0) => {
                    return Err(Error::Config("sor needs k >= 1 and alpha > 0".into()))
                }
                DefenseConfig::Srs { ratio, .. } if !(ratio > 0.0 && ratio <= 1.0) => {
                    return Err(Error::Config("srs ratio must lie in (0, 1]".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn attack_seed(&self) -> u64 {
        self.campaign.seed.unwrap_or(self.seed)
    }

    /// Canonical TOML of the fully resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    /// Hex SHA-256 of [`RunConfig::to_toml`].
    pub fn hash(&self) -> String {
        hash_text(&self.to_toml())
    }
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
