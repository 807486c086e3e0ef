//! Synthetic feature generation in clamped hypercubes around scaled points.
//!
//! The first `n_original` rows of an augmented set are the seed points
//! themselves. Generated row `i` (counting from the first synthetic row) is
//! derived only from `(seed, i)`: it picks its seed point, then draws every
//! component uniformly from `[x_j − s, x_j + s]` and clamps into `[0, 1]`.
//! Any prefix of a larger set is therefore the smaller set for the same
//! seed, and generation order does not matter.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SpaceTag};
use crate::ensemble::EnsembleModel;
use crate::error::{check_dim, Error, Result};
use crate::rng;

pub const MAX_SCALE_FACTOR: f64 = 0.5;
pub const SIGMA_A_COLUMN: &str = "sigma_A";

/// How generated rows are assigned to seed points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Allocation {
    /// Generated row `i` grows from seed point `i mod n_original`.
    #[default]
    RoundRobin,
    /// Each generated row picks its seed point uniformly at random.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub scale_factor: f64,
    /// Total rows including the seed points.
    pub n_total: usize,
    pub seed: u64,
    #[serde(default)]
    pub allocation: Allocation,
}

impl AugmentationConfig {
    pub fn new(scale_factor: f64, n_total: usize, seed: u64) -> Self {
        Self {
            scale_factor,
            n_total,
            seed,
            allocation: Allocation::RoundRobin,
        }
    }

    pub fn validate_scale(scale_factor: f64) -> Result<()> {
        if !(0.0..=MAX_SCALE_FACTOR).contains(&scale_factor) {
            return Err(Error::invalid(format!(
                "scale factor {scale_factor} outside the supported range [0, {MAX_SCALE_FACTOR}] \
                 (sampled range is 0.001 to 0.5)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub x_beta: Array2<f64>,
    /// Seed point each row derives from; seed rows map to themselves.
    pub origin_row: Vec<usize>,
    pub is_original: Vec<bool>,
}

impl AugmentedSet {
    pub fn n_rows(&self) -> usize {
        self.x_beta.nrows()
    }

    pub fn n_original(&self) -> usize {
        self.is_original.iter().filter(|&&o| o).count()
    }

    /// First `n` rows; equals the set generated with `n_total = n`.
    pub fn truncated(&self, n: usize) -> AugmentedSet {
        let n = n.min(self.n_rows());
        AugmentedSet {
            x_beta: self.x_beta.slice(ndarray::s![..n, ..]).to_owned(),
            origin_row: self.origin_row[..n].to_vec(),
            is_original: self.is_original[..n].to_vec(),
        }
    }
}

fn fill_row(seed_row: ndarray::ArrayView1<f64>, s: f64, rng: &mut impl Rng, out: ndarray::ArrayViewMut1<f64>) {
    for (o, &x) in out.into_iter().zip(seed_row.iter()) {
        let u: f64 = rng.random();
        *o = (x - s + 2.0 * s * u).clamp(0.0, 1.0);
    }
}

/// Seed points followed by `n_total − n_original` hypercube samples.
pub fn generate_augmented_features(x_beta0: ArrayView2<f64>, cfg: &AugmentationConfig) -> Result<AugmentedSet> {
    AugmentationConfig::validate_scale(cfg.scale_factor)?;
    let n0 = x_beta0.nrows();
    if n0 == 0 {
        return Err(Error::invalid("augmentation needs at least one seed point"));
    }
    if cfg.n_total < n0 {
        return Err(Error::invalid(format!(
            "n_total {} is smaller than the {n0} original rows",
            cfg.n_total
        )));
    }
    if let Some(((r, c), v)) = x_beta0.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "seed point entry {v} at row {r}, column {c} is outside [0,1]"
        )));
    }

    let d = x_beta0.ncols();
    let mut x_beta = Array2::zeros((cfg.n_total, d));
    x_beta.slice_mut(ndarray::s![..n0, ..]).assign(&x_beta0);
    let mut origin_row: Vec<usize> = (0..n0).collect();
    origin_row.resize(cfg.n_total, 0);

    let s = cfg.scale_factor;
    let (_, mut generated) = x_beta.view_mut().split_at(Axis(0), n0);
    generated
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(origin_row[n0..].par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, origin))| {
            let mut rng = rng::counter_stream(cfg.seed, i as u64);
            *origin = match cfg.allocation {
                Allocation::RoundRobin => i % n0,
                Allocation::Random => rng.random_range(0..n0),
            };
            fill_row(x_beta0.row(*origin), s, &mut rng, row);
        });

    let mut is_original = vec![true; n0];
    is_original.resize(cfg.n_total, false);
    Ok(AugmentedSet {
        x_beta,
        origin_row,
        is_original,
    })
}

/// Label an augmented set with the ensemble's calibrated error bars σ_A.
pub fn build_beta_dataset(aug: &AugmentedSet, e: &EnsembleModel, feature_names: &[String]) -> Result<Dataset> {
    check_dim(e.input_dim(), aug.x_beta.ncols(), "augmented columns vs ensemble")?;
    let targets = e.label_error_bars_par(aug.x_beta.view())?;
    Dataset::new(
        aug.x_beta.clone(),
        targets,
        feature_names.to_vec(),
        SIGMA_A_COLUMN,
        SpaceTag::Scaled,
    )
}

/// Features, `origin_row`, `is_original`, then σ_A when labels are given.
pub fn write_augmented_csv(
    aug: &AugmentedSet,
    feature_names: &[String],
    sigma_a: Option<&[f64]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    check_dim(aug.x_beta.ncols(), feature_names.len(), "augmented columns vs names")?;
    if let Some(l) = sigma_a {
        check_dim(aug.n_rows(), l.len(), "labels vs augmented rows")?;
    }
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = feature_names.to_vec();
    header.extend(["origin_row".to_string(), "is_original".to_string()]);
    if sigma_a.is_some() {
        header.push(SIGMA_A_COLUMN.to_string());
    }
    w.write_record(&header).map_err(err)?;
    for (i, row) in aug.x_beta.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(aug.origin_row[i].to_string());
        rec.push(u8::from(aug.is_original[i]).to_string());
        if let Some(l) = sigma_a {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
