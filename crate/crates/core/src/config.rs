//! Experiment configuration (TOML).
//!
//! Every section rejects unknown keys. Only `seed` and `dataset.source` are
//! required; everything else has a default, and [`ExperimentConfig::resolve`]
//! writes the computed ones back so that the resolved file alone reproduces a
//! run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::ActiveConfig;
use crate::data::{OodStrategy, PartitionMode};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::model::PriorHyper;
use crate::sgld::SgldConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Gaussian blobs generated from the seed.
    Synthetic,
    /// A CSV file with a trailing `label` column.
    Csv,
    /// MNIST in IDX format.
    Mnist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    /// Std of each synthetic blob, in raw units (means lie 2 apart per axis).
    #[serde(default = "defaults::spread")]
    pub spread: f64,
    /// Size of the generated synthetic training pool, per class.
    #[serde(default = "defaults::train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "defaults::test_per_class")]
    pub test_per_class: usize,
    /// CSV training pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// CSV test split; without it `test_size` rows are carved from the pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    /// Directory holding the four standard MNIST IDX files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    #[serde(default = "defaults::clients")]
    pub clients: usize,
    #[serde(default = "defaults::client_size")]
    pub client_size: usize,
    #[serde(default = "defaults::partition")]
    pub partition: PartitionMode,
    /// Share of a label-skewed client's data drawn from its major classes.
    #[serde(default = "defaults::major_share")]
    pub major_share: f64,
    /// Server unlabeled set size; defaults to 20% of the training pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_unlabeled: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    /// Teacher prior precision λ.
    pub teacher_prior_precision: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            teacher_hidden: vec![64, 64],
            student_hidden: vec![64, 64],
            teacher_prior_precision: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bins: usize,
    /// Defaults to shifted blobs at `10 × spread` for synthetic data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodStrategy>,
    pub ood_repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            ood: None,
            ood_repeats: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sgld: SgldConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub active: ActiveConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

mod defaults {
    use crate::data::PartitionMode;

    pub fn classes() -> usize {
        4
    }
    pub fn dim() -> usize {
        10
    }
    pub fn spread() -> f64 {
        0.8
    }
    pub fn train_per_class() -> usize {
        1500
    }
    pub fn test_per_class() -> usize {
        500
    }
    pub fn clients() -> usize {
        8
    }
    pub fn client_size() -> usize {
        500
    }
    pub fn partition() -> PartitionMode {
        PartitionMode::LabelSkew { major_classes: 2 }
    }
    pub fn major_share() -> f64 {
        0.9
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// A synthetic config with every default in place.
    pub fn synthetic(seed: u64) -> Self {
        Self::from_toml(&format!("seed = {seed}\n[dataset]\nsource = \"synthetic\"\n"))
            .expect("default synthetic config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let bad = |msg: String| Err(Error::Config(msg));
        if d.classes < 2 {
            return bad("dataset.classes must be >= 2".into());
        }
        if d.dim == 0 || d.clients == 0 || d.client_size == 0 {
            return bad("dataset.dim, clients and client_size must be >= 1".into());
        }
        if !(d.spread >= 0.0) || !d.spread.is_finite() {
            return bad("dataset.spread must be a finite value >= 0".into());
        }
        if !(0.0..=1.0).contains(&d.major_share) {
            return bad("dataset.major_share must lie in [0, 1]".into());
        }
        if let PartitionMode::LabelSkew { major_classes } = d.partition {
            if major_classes == 0 || major_classes > d.classes {
                return bad(format!(
                    "dataset.partition.major_classes must lie in 1..={}",
                    d.classes
                ));
            }
        }
        match d.source {
            DataSource::Synthetic => {
                if d.train_per_class == 0 || d.test_per_class == 0 {
                    return bad("dataset.train_per_class and test_per_class must be >= 1".into());
                }
            }
            DataSource::Csv if d.path.is_none() => return bad("dataset.path is required for source = \"csv\"".into()),
            DataSource::Mnist if d.mnist_dir.is_none() => {
                return bad("dataset.mnist_dir is required for source = \"mnist\"".into())
            }
            _ => {}
        }
        if self.model.teacher_hidden.contains(&0) || self.model.student_hidden.contains(&0) {
            return bad("model hidden widths must be >= 1".into());
        }
        PriorHyper::new(self.model.teacher_prior_precision)
            .map_err(|e| Error::Config(format!("model.teacher_prior_precision: {e}")))?;
        self.sgld.validate()?;
        self.distill.validate()?;
        self.federation.validate()?;
        self.active.validate()?;
        if self.eval.bins == 0 || self.eval.ood_repeats == 0 {
            return bad("eval.bins and eval.ood_repeats must be >= 1".into());
        }
        Ok(())
    }

    /// Fills computed defaults given the training-pool size.
    pub fn resolve(&mut self, pool_size: usize) {
        if self.dataset.server_unlabeled.is_none() {
            self.dataset.server_unlabeled = Some(pool_size / 5);
        }
        if self.federation.swa_start.is_none() {
            self.federation.swa_start = Some(self.federation.server_epochs.div_ceil(2));
        }
        if self.eval.ood.is_none() && self.dataset.source == DataSource::Synthetic {
            self.eval.ood = Some(OodStrategy::ShiftedBlobs {
                offset: 10.0 * self.dataset.spread,
            });
        }
    }
}
