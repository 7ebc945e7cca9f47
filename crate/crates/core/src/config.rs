//! Run configuration: one serializable record covering data generation,
//! pretraining, evaluation, seed and output location.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::Split;
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Regime};
use crate::synthgen::{generate_dataset, split_file, Dataset, GenConfig, SplitCounts};
use crate::train::PretrainConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "INTENTLAB_OUT";
pub const DEFAULT_OUT: &str = "runs";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSetting {
    pub regime: Regime,
    pub labeled_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub protocol: EvalConfig,
    /// Settings evaluated by `evaluate`, in order.
    pub settings: Vec<EvalSetting>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            protocol: EvalConfig::default(),
            settings: vec![
                EvalSetting { regime: Regime::Frozen, labeled_fraction: 0.1 },
                EvalSetting { regime: Regime::Frozen, labeled_fraction: 1.0 },
                EvalSetting { regime: Regime::Finetuned, labeled_fraction: 1.0 },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub counts: SplitCounts,
    pub pretrain: PretrainConfig,
    pub eval: EvalSettings,
    /// Seeds pretraining and evaluation; `gen.seed` seeds the data.
    pub seed: u64,
    /// Where artifacts go. Not part of the digest.
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gen: GenConfig::default(),
            counts: SplitCounts::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalSettings::default(),
            seed: 0,
            out_dir: PathBuf::from(DEFAULT_OUT),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.pretrain.dims.validate()?;
        self.eval.protocol.validate()?;
        if self.pretrain.dims.d_in != self.gen.d_in {
            return Err(Error::InvalidConfig(format!(
                "encoder input {} does not match feature dimension {}",
                self.pretrain.dims.d_in, self.gen.d_in
            )));
        }
        if self.pretrain.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.pretrain.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.pretrain.lr)));
        }
        if !(self.pretrain.temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.pretrain.temperature));
        }
        for s in &self.eval.settings {
            if !(s.labeled_fraction > 0.0 && s.labeled_fraction <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "labeled fraction must be in (0, 1], got {}",
                    s.labeled_fraction
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON of everything that affects artifact contents.
    pub fn canonical_json(&self) -> String {
        let mut view = self.clone();
        view.out_dir = PathBuf::new();
        serde_json::to_string(&view).expect("config serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Digest of the data-generation part only, for dataset manifests.
    pub fn data_digest(&self) -> String {
        let json = serde_json::to_string(&(&self.gen, &self.counts)).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Provenance written next to a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Digest of the generation config and split counts.
    pub config_digest: String,
    pub seed: u64,
    /// Set when `regime_shift = 0`: the two regimes are indistinguishable.
    pub no_signal: bool,
    pub gen: GenConfig,
    pub counts: SplitCounts,
    /// Split file name to hex SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

/// Generates the dataset for `cfg` into the existing directory `dir` and
/// writes its manifest.
pub fn write_dataset(cfg: &RunConfig, dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    cfg.gen.validate()?;
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let dataset = generate_dataset(&cfg.gen, cfg.counts)?;
    dataset.write(dir)?;
    let mut files = BTreeMap::new();
    for split in Split::ALL {
        let name = split_file(split);
        let path = dir.join(&name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.insert(name, hex::encode(Sha256::digest(&bytes)));
    }
    let manifest = DatasetManifest {
        config_digest: cfg.data_digest(),
        seed: cfg.gen.seed,
        no_signal: cfg.gen.is_no_signal(),
        gen: cfg.gen.clone(),
        counts: cfg.counts,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((dataset, manifest))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::DatasetNotFound(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, line: 1, source })
}
