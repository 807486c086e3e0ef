//! Run configuration: one JSON document covering every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{Allocation, AugmentationConfig};
use crate::data::{load_dataset_csv, Dataset};
use crate::ensemble::{BootstrapOptions, DEFAULT_CALIBRATION_BINS, DEFAULT_MEMBERS};
use crate::error::{Error, Result};
use crate::nn::MlpConfig;
use crate::synth::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        target_column: String,
        #[serde(default)]
        feature_columns: Option<Vec<String>>,
    },
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            spec: SyntheticSpec::default(),
        }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Csv {
                path,
                target_column,
                feature_columns,
            } => load_dataset_csv(path, target_column, feature_columns.as_deref()),
            DatasetSource::Synthetic { spec } => generate_synthetic(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSettings {
    pub members: usize,
    pub bootstrap: BootstrapOptions,
    pub calibration_bins: usize,
    pub calibration_folds: usize,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            members: DEFAULT_MEMBERS,
            bootstrap: BootstrapOptions::default(),
            calibration_bins: DEFAULT_CALIBRATION_BINS,
            calibration_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSettings {
    pub scale_factors: Vec<f64>,
    /// Learning-curve sizes. The original point count is always added as
    /// the first size; smaller entries are dropped.
    pub sizes: Vec<usize>,
    pub allocation: Allocation,
    /// Scale factor of the augmented set the bundled Model B is fitted on
    /// (default: the first scale factor).
    pub distill_scale_factor: Option<f64>,
    /// Size of that set (default: the largest size).
    pub distill_size: Option<usize>,
}

impl Default for AugmentationSettings {
    fn default() -> Self {
        Self {
            scale_factors: vec![0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5],
            sizes: vec![1_000, 3_000, 10_000, 30_000, 100_000],
            allocation: Allocation::RoundRobin,
            distill_scale_factor: None,
            distill_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub batch_size: usize,
    pub repeats: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            repeats: 7,
        }
    }
}

/// Every knob of a run. Network seeds inside `model_a`/`model_b` are
/// replaced by substreams of `seed` so a single number fixes the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset_name: String,
    pub dataset: DatasetSource,
    pub model_a: MlpConfig,
    pub ensemble: EnsembleSettings,
    pub augmentation: AugmentationSettings,
    pub model_b: MlpConfig,
    pub cv_folds: usize,
    /// Size reported in the middle column of the stats table
    /// (default: the largest size).
    pub n_max_report: Option<usize>,
    pub bench: BenchSettings,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_name: "synthetic".into(),
            dataset: DatasetSource::default(),
            model_a: MlpConfig::default(),
            ensemble: EnsembleSettings::default(),
            augmentation: AugmentationSettings::default(),
            model_b: MlpConfig::default(),
            cv_folds: 5,
            n_max_report: None,
            bench: BenchSettings::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Csv { path, .. } = &self.dataset {
            if !path.is_file() {
                return Err(Error::invalid(format!("dataset file {} does not exist", path.display())));
            }
        }
        if let DatasetSource::Synthetic { spec } = &self.dataset {
            spec.validate()?;
        }
        self.model_a.validate()?;
        self.model_b.validate()?;
        if self.ensemble.members < 2 {
            return Err(Error::invalid("ensemble.members must be >= 2"));
        }
        if self.ensemble.calibration_bins == 0 || self.ensemble.calibration_folds < 2 {
            return Err(Error::invalid("calibration needs >= 1 bin and >= 2 folds"));
        }
        if self.cv_folds < 2 {
            return Err(Error::invalid("cv_folds must be >= 2"));
        }
        let aug = &self.augmentation;
        if aug.scale_factors.is_empty() {
            return Err(Error::invalid("augmentation.scale_factors is empty"));
        }
        for &s in aug.scale_factors.iter().chain(aug.distill_scale_factor.iter()) {
            AugmentationConfig::validate_scale(s)?;
        }
        Ok(())
    }

    /// Learning-curve sizes for a dataset of `n_original` rows.
    pub fn curve_sizes(&self, n_original: usize) -> Vec<usize> {
        let mut sizes = vec![n_original];
        let mut rest: Vec<usize> = self.augmentation.sizes.iter().copied().filter(|&n| n > n_original).collect();
        rest.sort_unstable();
        rest.dedup();
        sizes.extend(rest);
        sizes
    }

    pub fn report_size(&self, n_original: usize) -> Result<usize> {
        let sizes = self.curve_sizes(n_original);
        let n = self.n_max_report.unwrap_or(*sizes.last().unwrap());
        if sizes.contains(&n) {
            Ok(n)
        } else {
            Err(Error::invalid(format!("n_max_report {n} is not one of the curve sizes {sizes:?}")))
        }
    }

    pub fn distill_target(&self, n_original: usize) -> (f64, usize) {
        let s = self.augmentation.distill_scale_factor.unwrap_or(self.augmentation.scale_factors[0]);
        let n = self
            .augmentation
            .distill_size
            .unwrap_or(*self.curve_sizes(n_original).last().unwrap())
            .max(n_original);
        (s, n)
    }
}
