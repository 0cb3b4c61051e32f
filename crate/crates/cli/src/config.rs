//! Experiment configuration and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bindelta::binning::Composition;
use bindelta::data::{self, Dataset, SynthConfig};
use bindelta::models::{Architecture, BinSelection, ModelVariant, TrainConfig, VariantKind};
use bindelta::net::AdamConfig;

use crate::RunError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "BINDELTA_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// Rows `category, y1, y2, y3, f1, …, fD`.
    Csv {
        path: PathBuf,
        #[serde(default)]
        feature_dim: Option<usize>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

/// Everything needed to reproduce a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: String,
    /// Key-pose count; `None` uses the variant default.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub composition: Option<Composition>,
    pub bin_selection: BinSelection,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay: f64,
    pub clip: Option<f64>,
    pub warm_start: bool,
    pub arch: Architecture,
    pub data: DataSource,
    pub val_fraction: f64,
    /// Dictionary sizes written by `discretize`.
    pub k_values: Vec<usize>,
    /// Seeds per sweep point in `ablate`.
    pub trials: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            variant: "M_G+".into(),
            k: None,
            alpha: None,
            gamma: None,
            composition: None,
            bin_selection: BinSelection::TeacherForced,
            seed: 0,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            decay: t.adam.decay,
            clip: None,
            warm_start: t.warm_start,
            arch: t.arch,
            data: DataSource::default(),
            val_fraction: 1.0 / 6.0,
            k_values: vec![4, 8, 16, 24],
            trials: 3,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, RunError> {
        serde_json::from_str(s).map_err(|e| RunError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn kind(&self) -> Result<VariantKind, RunError> {
        self.variant
            .parse()
            .map_err(|e: bindelta::Error| RunError::Usage(e.to_string()))
    }

    pub fn model_variant(&self) -> Result<ModelVariant, RunError> {
        let mut v = ModelVariant::new(self.kind()?).with_bin_selection(self.bin_selection);
        if let Some(k) = self.k {
            v = v.with_k(k);
        }
        if let Some(a) = self.alpha {
            v = v.with_alpha(a);
        }
        if let Some(c) = self.composition {
            v = v.with_composition(c);
        }
        v.validate().map_err(|e| RunError::Usage(e.to_string()))?;
        Ok(v)
    }

    /// Training settings for trial seed `seed`.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                decay: self.decay,
                ..AdamConfig::default()
            },
            seed,
            gamma: self.gamma,
            clip: self.clip,
            warm_start: self.warm_start,
            arch: self.arch.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.model_variant()?;
        if self.batch_size == 0 {
            return Err(RunError::Usage("batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(RunError::Usage("val_fraction must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.decay > 0.0) {
            return Err(RunError::Usage("lr and decay must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(RunError::Usage(format!("gamma must be positive, got {g}")));
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate().map_err(|e| RunError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset, RunError> {
        Ok(match &self.data {
            DataSource::Synthetic(s) => data::generate_synthetic(s)?,
            DataSource::Csv { path, feature_dim } => data::load_csv(path, *feature_dim)?,
        })
    }

    /// `--out`, then the config's `out`, then `$BINDELTA_OUT/<name>`, then
    /// `runs/<name>`.
    pub fn output_dir(&self, name: &str) -> PathBuf {
        if let Some(p) = &self.out {
            return p.clone();
        }
        match std::env::var_os(OUT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(name),
            _ => PathBuf::from("runs").join(name),
        }
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset_hash(ds: &Dataset) -> String {
    hex(&Sha256::digest(ds.to_csv().as_bytes()))
}

/// Written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config_sha256: String,
    pub data_sha256: String,
    pub categories: Vec<u32>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, ds: &Dataset) -> Self {
        RunManifest {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: cfg.hash(),
            data_sha256: dataset_hash(ds),
            categories: ds.categories(),
            config: cfg.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self).map_err(bindelta::Error::from)?,
        )?;
        Ok(())
    }
}
