//! Datasets, generators, loaders and client partitioning.

mod csvio;
mod idx;
mod ood;
mod partition;
mod synthetic;

pub use csvio::{read_csv, write_csv};
pub use idx::{load_idx, load_idx_unstandardized, parse_idx_images, parse_idx_labels};
pub use ood::{make_ood_pair, OodStrategy};
pub use partition::{partition, PartitionMode, PartitionPlan, PartitionRequest};
pub use synthetic::{class_means, gen_synthetic, gen_synthetic_raw, MEAN_SCALE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tensor::Matrix;

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Per-feature statistics. Constant features keep a divisor of 1.
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    /// One mean and std shared by every feature (used for pixel data).
    pub fn fit_global(x: &Matrix) -> Self {
        let data = x.data();
        let n = data.len().max(1) as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self {
            mean: vec![mean; x.cols()],
            std: vec![sd; x.cols()],
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Labeled examples with standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: String,
    /// Statistics used to standardize `features`, when known.
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Argument(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Argument(format!("label {y} >= class count {classes}")));
        }
        if !features.is_finite() {
            return Err(Error::Argument("dataset contains non-finite features".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance: provenance.into(),
            standardizer: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance.clone(),
            standardizer: self.standardizer.clone(),
        }
    }

    /// Inputs only; used for the server's unlabeled set.
    pub fn unlabeled(&self, indices: &[usize]) -> Matrix {
        self.features.select_rows(indices)
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            inputs: &self.features,
            labels: &self.labels,
        }
    }

    /// Fits a per-feature standardizer on `self` and applies it to both sets.
    pub fn standardize_with_test(mut self, mut test: Dataset) -> (Dataset, Dataset) {
        let st = Standardizer::fit(&self.features);
        self.features = st.apply(&self.features);
        test.features = st.apply(&test.features);
        self.standardizer = Some(st.clone());
        test.standardizer = Some(st);
        (self, test)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}
