//! Bootstrap ensemble of networks with an affine error-bar calibration.
//!
//! The raw error bar of a row is the sample standard deviation (divisor
//! M − 1) of the member predictions. Calibration maps it through
//! `max(sigma_floor, a·σ_raw + b)`, with `(a, b)` fitted by least squares
//! through equal-count bins of held-out (spread, RMS residual) pairs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::nn::{train_mlp, MlpConfig, MlpModel};
use crate::rng;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;
pub const DEFAULT_MEMBERS: usize = 20;
pub const DEFAULT_CALIBRATION_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub a: f64,
    pub b: f64,
    pub sigma_floor: f64,
    pub method_tag: String,
    pub n_bins: usize,
}

impl CalibrationParams {
    /// `a = 1, b = 0`: calibrated error bars equal the raw spread.
    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            method_tag: "identity".into(),
            n_bins: 0,
        }
    }

    pub fn apply(&self, sigma_raw: f64) -> f64 {
        (self.a * sigma_raw + self.b).max(self.sigma_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::invalid("calibration coefficients must be finite"));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::invalid("sigma_floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainPrediction {
    pub mean: f64,
    pub sigma_raw: f64,
    pub sigma_cal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<MlpModel>,
    pub calibration: CalibrationParams,
    pub member_seeds: Vec<u64>,
}

/// Bootstrap resampling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    /// Resample size as a fraction of the dataset size.
    pub fraction: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { fraction: 1.0 }
    }
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Result<Vec<usize>> {
    bootstrap_sample(n, n, seed)
}

/// `size` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_sample(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 1 || size < 1 {
        return Err(Error::invalid("bootstrap needs at least one row"));
    }
    let mut rng = rng::stream(seed, &[0x424f4f54]);
    Ok((0..size).map(|_| rng.random_range(0..n)).collect())
}

/// Train `m` members on bootstrap resamples of `d`. Member `i` draws its
/// resample and network seeds from the substreams `(seed, i, ..)`, so the
/// result does not depend on how members are scheduled across threads.
pub fn train_ensemble(d: &Dataset, m: usize, config: &MlpConfig, seed: u64) -> Result<EnsembleModel> {
    train_ensemble_with(d, m, config, seed, BootstrapOptions::default())
}

pub fn train_ensemble_with(
    d: &Dataset,
    m: usize,
    config: &MlpConfig,
    seed: u64,
    bootstrap: BootstrapOptions,
) -> Result<EnsembleModel> {
    if m < 2 {
        return Err(Error::invalid(format!("an ensemble needs at least 2 members, got {m}")));
    }
    if d.n_rows() == 0 {
        return Err(Error::invalid("cannot train an ensemble on an empty dataset"));
    }
    if !(bootstrap.fraction > 0.0 && bootstrap.fraction.is_finite()) {
        return Err(Error::invalid("bootstrap fraction must be positive"));
    }
    config.validate()?;
    let size = ((d.n_rows() as f64 * bootstrap.fraction).round() as usize).max(1);
    let member_seeds: Vec<u64> = (0..m as u64).map(|i| rng::derive_seed(seed, &[i])).collect();
    let members = member_seeds
        .par_iter()
        .enumerate()
        .map(|(i, &member_seed)| {
            let idx = bootstrap_sample(d.n_rows(), size, rng::derive_seed(member_seed, &[2]))?;
            let x = d.features.select(Axis(0), &idx);
            let y = d.targets.select(Axis(0), &idx);
            let cfg = config.reseeded(member_seed, &[]);
            train_mlp(x.view(), y.view(), &cfg)
                .map(|(model, _)| model)
                .map_err(|e| e.context(format!("ensemble member {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        members,
        calibration: CalibrationParams::identity(),
        member_seeds,
    })
}

impl EnsembleModel {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(MlpModel::param_count).sum()
    }

    pub fn macs_per_row(&self) -> usize {
        self.members.iter().map(MlpModel::macs_per_row).sum()
    }

    pub fn with_calibration(mut self, calibration: CalibrationParams) -> Self {
        self.calibration = calibration;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::invalid("an ensemble needs at least 2 members"));
        }
        let dim = self.input_dim();
        for m in &self.members {
            m.validate_shapes()?;
            check_dim(dim, m.input_dim, "ensemble member input_dim")?;
        }
        self.calibration.validate()
    }

    /// Member predictions, one column per member.
    fn member_outputs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.input_dim(), x.ncols(), "ensemble input columns")?;
        let mut out = Array2::zeros((x.nrows(), self.members.len()));
        for (m, mut col) in self.members.iter().zip(out.columns_mut()) {
            col.assign(&m.forward(x)?);
        }
        Ok(out)
    }

    /// Per-row (mean, raw spread).
    pub fn mean_and_spread(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let outputs = self.member_outputs(x)?;
        let m = self.members.len() as f64;
        let mut means = Array1::zeros(x.nrows());
        let mut spreads = Array1::zeros(x.nrows());
        for ((row, mean), spread) in outputs.rows().into_iter().zip(means.iter_mut()).zip(spreads.iter_mut()) {
            // shifted by the first member so agreeing members give their value exactly
            let first = row[0];
            let mu = first + row.iter().map(|v| v - first).sum::<f64>() / m;
            let ss: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum();
            *mean = mu;
            *spread = (ss / (m - 1.0)).sqrt();
        }
        Ok((means, spreads))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<UncertainPrediction>> {
        let (means, spreads) = self.mean_and_spread(x)?;
        Ok(means
            .iter()
            .zip(spreads.iter())
            .map(|(&mean, &sigma_raw)| UncertainPrediction {
                mean,
                sigma_raw,
                sigma_cal: self.calibration.apply(sigma_raw),
            })
            .collect())
    }

    /// Calibrated error bars σ_A, one per row.
    pub fn label_error_bars(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (_, spreads) = self.mean_and_spread(x)?;
        Ok(spreads.mapv(|s| self.calibration.apply(s)))
    }

    /// [`Self::label_error_bars`] over row blocks in parallel.
    pub fn label_error_bars_par(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        const BLOCK: usize = 2048;
        let blocks = x
            .axis_chunks_iter(Axis(0), BLOCK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|b| self.label_error_bars(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(blocks.into_iter().flatten().collect())
    }
}

pub fn ensemble_predict(e: &EnsembleModel, x: ArrayView2<f64>) -> Result<Vec<UncertainPrediction>> {
    e.predict(x)
}

pub fn label_error_bars(e: &EnsembleModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    e.label_error_bars(x)
}

/// Fit calibration on held-out data for an already trained ensemble.
pub fn fit_calibration(
    e: &EnsembleModel,
    x_cal: ArrayView2<f64>,
    y_cal: ArrayView1<f64>,
    n_bins: usize,
) -> Result<CalibrationParams> {
    check_dim(x_cal.nrows(), y_cal.len(), "calibration targets vs rows")?;
    let (means, spreads) = e.mean_and_spread(x_cal)?;
    let residuals = &means - &y_cal;
    fit_calibration_pairs(spreads.view(), residuals.view(), n_bins)
}

/// Binned linear recalibration from (raw spread, residual) pairs.
///
/// Rows are sorted by spread and dealt into `n_bins` equal-count bins (the
/// first `n % n_bins` bins take one extra row). Each bin contributes the
/// point (mean spread, RMS residual); `a` and `b` are the ordinary least
/// squares line through those points. When the bin spreads have no
/// variance the fit falls back to the ratio `a = RMS(r) / mean(s)`, or to
/// `a = 1, b = RMS(r)` if every spread is zero.
pub fn fit_calibration_pairs(
    spreads: ArrayView1<f64>,
    residuals: ArrayView1<f64>,
    n_bins: usize,
) -> Result<CalibrationParams> {
    check_dim(spreads.len(), residuals.len(), "calibration residuals vs spreads")?;
    if n_bins == 0 {
        return Err(Error::invalid("calibration needs at least one bin"));
    }
    let n = spreads.len();
    if n < 2 * n_bins {
        return Err(Error::invalid(format!(
            "calibration with {n_bins} bins needs at least {} rows, got {n}",
            2 * n_bins
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| spreads[i].total_cmp(&spreads[j]).then(i.cmp(&j)));

    let (base, extra) = (n / n_bins, n % n_bins);
    let mut points = Vec::with_capacity(n_bins);
    let mut start = 0;
    for bin in 0..n_bins {
        let len = base + usize::from(bin < extra);
        let rows = &order[start..start + len];
        let mean_s = rows.iter().map(|&i| spreads[i]).sum::<f64>() / len as f64;
        let rms_r = (rows.iter().map(|&i| residuals[i] * residuals[i]).sum::<f64>() / len as f64).sqrt();
        points.push((mean_s, rms_r));
        start += len;
    }

    let k = n_bins as f64;
    let sx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let sy = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - sx) * (p.0 - sx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - sx) * (p.1 - sy)).sum();

    let (a, b, method_tag) = if sxx > f64::EPSILON * sx.abs().max(1.0) * k {
        let a = sxy / sxx;
        (a, sy - a * sx, "binned-linear")
    } else {
        let mean_s = spreads.mean().unwrap_or(0.0);
        let rms_r = (residuals.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
        if mean_s > 0.0 {
            (rms_r / mean_s, 0.0, "ratio-fallback")
        } else {
            (1.0, rms_r, "constant-fallback")
        }
    };
    let params = CalibrationParams {
        a,
        b,
        sigma_floor: DEFAULT_SIGMA_FLOOR,
        method_tag: method_tag.into(),
        n_bins,
    };
    params.validate()?;
    Ok(params)
}

/// Held-out (spread, residual) pairs from a k-fold run: for each fold an
/// `m`-member ensemble is trained on the remaining rows and evaluated on
/// the fold. Pairs are returned in dataset row order.
pub fn cv_residual_pairs(
    d: &Dataset,
    m: usize,
    config: &MlpConfig,
    seed: u64,
    k: usize,
    bootstrap: BootstrapOptions,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let folds = kfold_split(d.n_rows(), k, rng::derive_seed(seed, &[0x43414c]))?;
    let mut spreads = Array1::zeros(d.n_rows());
    let mut residuals = Array1::zeros(d.n_rows());
    for fold in 0..k {
        let (train, test) = folds.split(fold);
        let fold_seed = rng::derive_seed(seed, &[0x43414c, fold as u64]);
        let e = train_ensemble_with(&d.select_rows(&train), m, config, fold_seed, bootstrap)
            .map_err(|e| e.context(format!("calibration fold {fold}")))?;
        let held = d.select_rows(&test);
        let (means, sp) = e.mean_and_spread(held.features.view())?;
        for (j, &row) in test.iter().enumerate() {
            spreads[row] = sp[j];
            residuals[row] = means[j] - held.targets[j];
        }
    }
    Ok((spreads, residuals))
}

/// Calibration from out-of-fold residuals of a dedicated k-fold run.
pub fn calibrate_by_cv(
    d: &Dataset,
    m: usize,
    config: &MlpConfig,
    seed: u64,
    k: usize,
    n_bins: usize,
    bootstrap: BootstrapOptions,
) -> Result<CalibrationParams> {
    let (spreads, residuals) = cv_residual_pairs(d, m, config, seed, k, bootstrap)?;
    fit_calibration_pairs(spreads.view(), residuals.view(), n_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpaceTag;
    use crate::nn::init_mlp;
    use ndarray::array;
    use std::collections::HashSet;

    fn toy(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % n) as f64 / n as f64);
        let y = x.map_axis(Axis(1), |r| r[0] + 2.0 * r[1]);
        Dataset::new(x, y, Dataset::default_feature_names(2), "y", SpaceTag::Scaled).unwrap()
    }

    /// Two single-layer linear "networks" returning constants c0 and c1.
    fn constant_pair(c0: f64, c1: f64) -> EnsembleModel {
        let member = |c: f64| MlpModel {
            weights: vec![array![[0.0]]],
            biases: vec![array![c]],
            config: MlpConfig::default().with_hidden(&[]),
            input_dim: 1,
            trained: true,
        };
        EnsembleModel {
            members: vec![member(c0), member(c1)],
            calibration: CalibrationParams::identity(),
            member_seeds: vec![0, 1],
        }
    }

    #[test]
    fn bootstrap_basics() {
        assert_eq!(bootstrap_indices(1, 5).unwrap(), vec![0]);
        let idx = bootstrap_indices(1000, 3).unwrap();
        assert_eq!(idx.len(), 1000);
        assert!(idx.iter().all(|&i| i < 1000));
        assert_eq!(idx, bootstrap_indices(1000, 3).unwrap());
        assert!(bootstrap_indices(0, 3).is_err());
    }

    #[test]
    fn bootstrap_unique_fraction_near_one_minus_inv_e() {
        let n = 10_000;
        let idx = bootstrap_indices(n, 11).unwrap();
        let unique = idx.iter().collect::<HashSet<_>>().len() as f64 / n as f64;
        let analytic = 1.0 - (1.0 - 1.0 / n as f64).powi(n as i32);
        assert!((unique - analytic).abs() < 0.02, "{unique} vs {analytic}");
    }

    #[test]
    fn two_member_spread_hand_value() {
        let e = constant_pair(1.0, 3.0);
        let p = e.predict(array![[0.0]].view()).unwrap();
        assert_eq!(p[0].mean, 2.0);
        assert!((p[0].sigma_raw - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn affine_calibration_example() {
        let c = CalibrationParams { a: 2.0, b: 0.1, ..CalibrationParams::identity() };
        assert!((c.apply(0.5) - 1.1).abs() < 1e-15);
        assert_eq!(c.apply(-10.0), c.sigma_floor);
    }

    #[test]
    fn identical_members_have_zero_spread() {
        let e = constant_pair(4.0, 4.0);
        let p = e.predict(array![[1.0], [2.0]].view()).unwrap();
        assert!(p.iter().all(|u| u.sigma_raw == 0.0 && u.sigma_cal == DEFAULT_SIGMA_FLOOR));
    }

    #[test]
    fn copies_of_one_model_reproduce_it() {
        let m = init_mlp(3, &MlpConfig::default().with_hidden(&[5])).unwrap();
        let e = EnsembleModel {
            members: vec![m.clone(); 3],
            calibration: CalibrationParams::identity(),
            member_seeds: vec![0; 3],
        };
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i + j) as f64 / 9.0);
        let mean: Vec<f64> = e.predict(x.view()).unwrap().iter().map(|p| p.mean).collect();
        assert_eq!(mean, m.forward(x.view()).unwrap().to_vec());
    }

    #[test]
    fn train_ensemble_contract() {
        let d = toy(10);
        let cfg = MlpConfig::default().with_hidden(&[4]).with_epochs(5);
        let e = train_ensemble(&d, 2, &cfg, 7).unwrap();
        assert_eq!(e.n_members(), 2);
        assert_ne!(e.members[0].weights, e.members[1].weights);
        assert_eq!(e.calibration, CalibrationParams::identity());
        assert_eq!(e, train_ensemble(&d, 2, &cfg, 7).unwrap());
        e.validate().unwrap();
        assert!(train_ensemble(&d, 1, &cfg, 7).is_err());
    }

    #[test]
    fn ensemble_result_is_independent_of_thread_count() {
        let d = toy(30);
        let cfg = MlpConfig::default().with_hidden(&[4]).with_epochs(3);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| train_ensemble(&d, 5, &cfg, 1).unwrap());
        let b = four.install(|| train_ensemble(&d, 5, &cfg, 1).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn labels_match_predict_and_respect_floor() {
        let d = toy(40);
        let cfg = MlpConfig::default().with_hidden(&[4]).with_epochs(3);
        let e = train_ensemble(&d, 3, &cfg, 2)
            .unwrap()
            .with_calibration(CalibrationParams { a: 1.5, b: -0.01, ..CalibrationParams::identity() });
        let x = d.features.slice(ndarray::s![..5, ..]);
        let labels = e.label_error_bars(x).unwrap();
        assert_eq!(labels.len(), 5);
        let preds = e.predict(x).unwrap();
        for (l, p) in labels.iter().zip(&preds) {
            assert_eq!(*l, p.sigma_cal);
            assert!(*l >= e.calibration.sigma_floor);
        }
        assert_eq!(e.label_error_bars_par(d.features.view()).unwrap(), e.label_error_bars(d.features.view()).unwrap());
        assert!(e.label_error_bars(Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn calibration_recovers_exact_line() {
        // RMS residual per bin exactly 3·s + 0.5 when residuals are ±(3s + 0.5)
        let s: Array1<f64> = (0..100).map(|i| 0.1 + i as f64 / 100.0).collect();
        let r: Array1<f64> = s.iter().enumerate().map(|(i, v)| if i % 2 == 0 { 1.0 } else { -1.0 } * (3.0 * v + 0.5)).collect();
        // two rows per bin keeps the within-bin RMS curvature below 1e-3
        let p = fit_calibration_pairs(s.view(), r.view(), 50).unwrap();
        assert_eq!(p.method_tag, "binned-linear");
        assert!((p.a - 3.0).abs() < 1e-3, "{p:?}");
        assert!((p.b - 0.5).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn single_bin_falls_back_to_ratio() {
        let s = array![1.0, 2.0, 3.0, 4.0];
        let r = array![2.0, -4.0, 6.0, -8.0];
        let p = fit_calibration_pairs(s.view(), r.view(), 1).unwrap();
        assert_eq!(p.method_tag, "ratio-fallback");
        let rms = (120.0f64 / 4.0).sqrt();
        assert!((p.a - rms / 2.5).abs() < 1e-12);
        assert_eq!(p.b, 0.0);
    }

    #[test]
    fn zero_spreads_fall_back_to_constant() {
        let s = Array1::zeros(6);
        let r = array![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let p = fit_calibration_pairs(s.view(), r.view(), 3).unwrap();
        assert_eq!(p.method_tag, "constant-fallback");
        assert_eq!((p.a, p.b), (1.0, 1.0));
    }

    #[test]
    fn calibration_rejects_too_few_rows() {
        let s = array![1.0, 2.0, 3.0];
        assert!(fit_calibration_pairs(s.view(), s.view(), 2).is_err());
        assert!(fit_calibration_pairs(s.view(), s.view(), 0).is_err());
    }

    #[test]
    fn cv_pairs_cover_every_row() {
        let d = toy(25);
        let cfg = MlpConfig::default().with_hidden(&[3]).with_epochs(2);
        let (s, r) = cv_residual_pairs(&d, 2, &cfg, 4, 5, BootstrapOptions::default()).unwrap();
        assert_eq!(s.len(), 25);
        assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(r.iter().all(|v| v.is_finite()));
        assert!(r.iter().any(|&v| v != 0.0));
    }
}
