//! Distilled error bars: a calibrated bootstrap ensemble of MLPs labels
//! synthetically augmented feature points with its error bars, and a single
//! MLP is trained on those labels to replace the ensemble at inference.
//!
//! Pipeline, in module order:
//!
//! - [`data`]: CSV ingest, min–max scaling, k-fold splits
//! - [`nn`]: MLP regressor trained with Adam
//! - [`ensemble`]: bootstrap ensemble and spread calibration
//! - [`augment`]: hypercube sampling around the scaled data points
//! - [`distill`]: error-bar network and the combined predictor
//! - [`eval`]: metrics, cross-validated learning curves, timing
//! - [`synth`]: synthetic regression tables
//! - [`cli`]: configuration, bundles and the stage commands

pub mod augment;
pub mod cli;
pub mod data;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod synth;

pub use augment::{build_beta_dataset, generate_augmented_features, Allocation, AugmentationConfig, AugmentedSet};
pub use data::{fit_scaler, kfold_split, load_dataset_csv, Dataset, FoldAssignment, MinMaxScaler, SpaceTag};
pub use distill::{predict_combined, predict_error_bar, train_model_b, CombinedPrediction, DistilledModel};
pub use ensemble::{
    ensemble_predict, fit_calibration, label_error_bars, train_ensemble, CalibrationParams, EnsembleModel,
    UncertainPrediction,
};
pub use error::{Error, Result};
pub use eval::{compute_metrics, cross_validate_model_b, run_learning_curve, stats_table, Metrics};
pub use nn::{init_mlp, train_mlp, MlpConfig, MlpModel};
pub use synth::{generate_synthetic, SyntheticSpec};
