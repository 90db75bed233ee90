//! Run configuration: one TOML file covering every module.

use std::path::{Path, PathBuf};

use loadshed::curriculum::CurriculumConfig;
use loadshed::env::EnvConfig;
use loadshed::pars::ParsConfig;
use loadshed::scenario::{CctSearch, SamplingConfig};
use loadshed::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Fault buses drawn from the screened candidates.
    pub n_fault_buses: usize,
    pub train_fraction: f64,
    /// Candidate fault buses are those at or above this voltage class.
    pub candidate_kv_min: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_fault_buses: 10,
            train_fraction: 0.5,
            candidate_kv_min: 115.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Scenarios per case used to adapt the latent context before
    /// evaluation; 0 evaluates the trained context as is.
    pub meta_probe: usize,
    pub histogram_bins: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            meta_probe: 0,
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Base case file.
    pub case: PathBuf,
    pub sampling: SamplingConfig,
    pub cct: CctSearch,
    pub datasets: DatasetConfig,
    pub env: EnvConfig,
    pub pars: ParsConfig,
    pub curriculum: CurriculumConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            case: PathBuf::from("crates/core/fixtures/mini-south.json"),
            sampling: SamplingConfig::default(),
            cct: CctSearch::default(),
            datasets: DatasetConfig::default(),
            env: EnvConfig::default(),
            pars: ParsConfig::default(),
            curriculum: CurriculumConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; unknown keys and type errors name the offending path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            key: e.path().to_string(),
            reason: e.inner().message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: "--config".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.cct.validate()?;
        self.env.validate()?;
        self.pars.validate()?;
        self.curriculum.validate(&self.pars)?;
        let d = &self.datasets;
        if d.n_fault_buses < 2 {
            return Err(Error::Config {
                key: "datasets.n_fault_buses".into(),
                reason: "need at least 2 to split into train and test".into(),
            });
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config {
                key: "datasets.train_fraction".into(),
                reason: "must be strictly between 0 and 1".into(),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of the canonical serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            seed: self.seed,
            ..self.sampling.clone()
        }
    }
}
