//! Regression metrics, k-fold evaluation of the distilled model, learning
//! curves over augmentation size, Table-style summaries and the inference
//! benchmark.
//!
//! `sigma` is the population standard deviation of the true values, so
//! `r2 = 1 − nrmse²` holds exactly up to rounding whenever `sigma > 0`.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{build_beta_dataset, generate_augmented_features, Allocation, AugmentationConfig};
use crate::data::{kfold_split, Dataset};
use crate::distill::{train_model_b, DistilledModel};
use crate::ensemble::EnsembleModel;
use crate::error::{check_dim, Error, Result};
use crate::nn::MlpConfig;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sigma: f64,
    pub mae: f64,
    pub r2: f64,
    pub rmse: f64,
    /// `rmse / sigma`; `+∞` when `sigma = 0`.
    pub nrmse: f64,
}

pub fn compute_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    check_dim(y_true.len(), y_pred.len(), "predictions vs targets")?;
    if y_true.is_empty() {
        return Err(Error::invalid("metrics over zero rows"));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let sst: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    let (mut sse, mut sae) = (0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let r = p - t;
        sse += r * r;
        sae += r.abs();
    }
    let sigma = (sst / n).sqrt();
    let rmse = (sse / n).sqrt();
    let (r2, nrmse) = if sigma > 0.0 {
        (1.0 - sse / sst, rmse / sigma)
    } else {
        (if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY }, f64::INFINITY)
    };
    Ok(Metrics {
        sigma,
        mae: sae / n,
        r2,
        rmse,
        nrmse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    /// Metrics over the pooled out-of-fold predictions.
    pub metrics: Metrics,
    pub per_fold: Vec<Metrics>,
    /// Out-of-fold prediction for every row, in dataset order.
    pub oof_predictions: Array1<f64>,
}

/// k-fold cross-validation of the distilled model. Each fold refits the
/// input scaler and network on its training rows only. Fold `f` trains with
/// the seed substream `(seed, f)`.
pub fn cross_validate_model_b(beta: &Dataset, k: usize, config: &MlpConfig, seed: u64) -> Result<CvOutcome> {
    let folds = kfold_split(beta.n_rows(), k, seed)?;
    let results = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = folds.split(fold);
            let cfg = config.reseeded(seed, &[fold as u64]);
            let model = train_model_b(&beta.select_rows(&train), &cfg)
                .map_err(|e| e.context(format!("CV fold {fold}")))?;
            let held = beta.select_rows(&test);
            let pred = model.predict_error_bar(held.features.view())?;
            let m = compute_metrics(held.targets.as_slice().unwrap(), pred.as_slice().unwrap())?;
            Ok((test, pred, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut oof = Array1::zeros(beta.n_rows());
    let mut per_fold = Vec::with_capacity(k);
    for (test, pred, m) in results {
        for (&row, &p) in test.iter().zip(pred.iter()) {
            oof[row] = p;
        }
        per_fold.push(m);
    }
    let metrics = compute_metrics(beta.targets.as_slice().unwrap(), oof.as_slice().unwrap())?;
    Ok(CvOutcome {
        metrics,
        per_fold,
        oof_predictions: oof,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub scale_factor: f64,
    pub n_points: usize,
    pub metrics: Metrics,
    pub per_fold: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSettings {
    pub scale_factors: Vec<f64>,
    /// Ascending augmented-set sizes, each at least the number of seed points.
    pub sizes: Vec<usize>,
    pub k_folds: usize,
    pub allocation: Allocation,
    pub model_b: MlpConfig,
    pub seed: u64,
}

/// Seed of the augmentation stream for scale factor `s`.
pub fn augmentation_seed(seed: u64, s: f64) -> u64 {
    rng::derive_seed(seed, &[0x415547, s.to_bits()])
}

/// Learning curve: for every scale factor, one augmented set of the largest
/// size is generated and labelled; each size is its prefix. Every (s, n)
/// cell is cross-validated with seeds derived from `(seed, s, n)`.
/// `on_point` sees each finished cell.
pub fn run_learning_curve(
    beta0: ArrayView2<f64>,
    feature_names: &[String],
    e: &EnsembleModel,
    settings: &CurveSettings,
    on_point: &(dyn Fn(&LearningCurvePoint) + Sync),
) -> Result<Vec<LearningCurvePoint>> {
    let n0 = beta0.nrows();
    if settings.sizes.is_empty() || settings.scale_factors.is_empty() {
        return Err(Error::invalid("learning curve needs at least one size and one scale factor"));
    }
    if settings.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("learning-curve sizes must be strictly ascending"));
    }
    if settings.sizes[0] < n0 {
        return Err(Error::invalid(format!(
            "learning-curve size {} is below the {n0} original points",
            settings.sizes[0]
        )));
    }
    for &s in &settings.scale_factors {
        AugmentationConfig::validate_scale(s)?;
    }
    let n_max = *settings.sizes.last().unwrap();
    let mut points = Vec::with_capacity(settings.scale_factors.len() * settings.sizes.len());
    for &s in &settings.scale_factors {
        let cfg = AugmentationConfig {
            scale_factor: s,
            n_total: n_max,
            seed: augmentation_seed(settings.seed, s),
            allocation: settings.allocation,
        };
        let aug = generate_augmented_features(beta0, &cfg)?;
        let full = build_beta_dataset(&aug, e, feature_names)?;
        let cells = settings
            .sizes
            .par_iter()
            .map(|&n| {
                let prefix: Vec<usize> = (0..n).collect();
                let beta = full.select_rows(&prefix);
                let cv_seed = rng::derive_seed(settings.seed, &[0x4356, s.to_bits(), n as u64]);
                let cv = cross_validate_model_b(&beta, settings.k_folds, &settings.model_b, cv_seed)
                    .map_err(|e| e.context(format!("learning curve s={s}, n={n}")))?;
                let point = LearningCurvePoint {
                    scale_factor: s,
                    n_points: n,
                    metrics: cv.metrics,
                    per_fold: cv.per_fold,
                };
                on_point(&point);
                Ok(point)
            })
            .collect::<Result<Vec<_>>>()?;
        points.extend(cells);
    }
    Ok(points)
}

/// One Table-style row: metrics at the original size, at the reporting
/// size, and the best (lowest nrmse) over all sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub scale_factor: f64,
    pub original: Metrics,
    pub at_max: Metrics,
    pub best: Metrics,
    pub best_n_points: usize,
    /// The reporting-size fit is not the best fit.
    pub flagged: bool,
}

pub fn stats_table(points: &[LearningCurvePoint], n_original: usize, n_max_report: usize) -> Result<Vec<StatsRow>> {
    let mut scales: Vec<f64> = Vec::new();
    for p in points {
        if !scales.contains(&p.scale_factor) {
            scales.push(p.scale_factor);
        }
    }
    scales
        .into_iter()
        .map(|s| {
            let series: Vec<&LearningCurvePoint> = points.iter().filter(|p| p.scale_factor == s).collect();
            let at = |n: usize| {
                series
                    .iter()
                    .find(|p| p.n_points == n)
                    .map(|p| p.metrics)
                    .ok_or_else(|| Error::invalid(format!("no learning-curve point for s={s}, n={n}")))
            };
            let original = at(n_original)?;
            let at_max = at(n_max_report)?;
            let best_point = series
                .iter()
                .min_by(|a, b| a.metrics.nrmse.total_cmp(&b.metrics.nrmse).then(b.n_points.cmp(&a.n_points)))
                .expect("series is non-empty");
            let flagged = best_point.metrics.nrmse < at_max.nrmse;
            let (best, best_n_points) = if flagged {
                (best_point.metrics, best_point.n_points)
            } else {
                (at_max, n_max_report)
            };
            Ok(StatsRow {
                scale_factor: s,
                original,
                at_max,
                best,
                best_n_points,
                flagged,
            })
        })
        .collect()
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_learning_curve_csv(points: &[LearningCurvePoint], dataset_name: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = csv_error(path);
    let folds = points.iter().map(|p| p.per_fold.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header: Vec<String> = ["dataset_name", "scale_factor", "n_points", "sigma", "mae", "r2", "rmse", "nrmse"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..folds).map(|i| format!("fold_{i}_nrmse")));
    w.write_record(&header).map_err(&err)?;
    for p in points {
        let m = &p.metrics;
        let mut rec = vec![
            dataset_name.to_string(),
            p.scale_factor.to_string(),
            p.n_points.to_string(),
            m.sigma.to_string(),
            m.mae.to_string(),
            m.r2.to_string(),
            m.rmse.to_string(),
            m.nrmse.to_string(),
        ];
        rec.extend((0..folds).map(|i| p.per_fold.get(i).map_or(String::new(), |f| f.nrmse.to_string())));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Table layout: one row per scale factor, `original/max/best` per statistic.
pub fn write_stats_table_csv(rows: &[StatsRow], dataset_name: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = csv_error(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["dataset", "scale_factor", "sigma", "mae", "r2", "nrmse", "rmse", "best_n_points", "flag"])
        .map_err(&err)?;
    for r in rows {
        let triple = |f: fn(&Metrics) -> f64| format!("{:.4}/{:.4}/{:.4}", f(&r.original), f(&r.at_max), f(&r.best));
        w.write_record([
            dataset_name.to_string(),
            r.scale_factor.to_string(),
            triple(|m| m.sigma),
            triple(|m| m.mae),
            triple(|m| m.r2),
            triple(|m| m.nrmse),
            triple(|m| m.rmse),
            r.best_n_points.to_string(),
            if r.flagged { "*".into() } else { String::new() },
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub ensemble_ns_per_row: f64,
    pub distilled_ns_per_row: f64,
    /// One ensemble member's forward pass, for reference.
    pub single_member_ns_per_row: f64,
    pub speedup: f64,
    pub ensemble_param_count: usize,
    pub distilled_param_count: usize,
    pub batch_size: usize,
    pub repeats: usize,
}

fn median_ns_per_row(repeats: usize, rows: usize, mut run: impl FnMut() -> Result<()>) -> Result<f64> {
    run()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        run()?;
        times.push(start.elapsed().as_nanos() as f64 / rows as f64);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[repeats / 2])
}

/// Median single-threaded time of error-bar prediction through the ensemble
/// and through the distilled model on the same batch (α-scaled features).
pub fn benchmark_inference(e: &EnsembleModel, b: &DistilledModel, batch: ArrayView2<f64>, repeats: usize) -> Result<BenchmarkResult> {
    if repeats < 3 {
        return Err(Error::invalid("benchmark needs at least 3 repeats"));
    }
    if batch.nrows() == 0 {
        return Err(Error::invalid("benchmark batch is empty"));
    }
    check_dim(e.input_dim(), batch.ncols(), "benchmark batch columns")?;
    check_dim(b.input_dim(), batch.ncols(), "benchmark batch columns")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|err| Error::invalid(err.to_string()))?;
    pool.install(|| {
        let rows = batch.nrows();
        let ensemble = median_ns_per_row(repeats, rows, || e.label_error_bars(batch).map(drop))?;
        let distilled = median_ns_per_row(repeats, rows, || b.predict_error_bar(batch).map(drop))?;
        let single = median_ns_per_row(repeats, rows, || e.members[0].forward(batch).map(drop))?;
        Ok(BenchmarkResult {
            ensemble_ns_per_row: ensemble,
            distilled_ns_per_row: distilled,
            single_member_ns_per_row: single,
            speedup: ensemble / distilled,
            ensemble_param_count: e.param_count(),
            distilled_param_count: b.net.param_count(),
            batch_size: rows,
            repeats,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpaceTag;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn perfect_predictor() {
        let y = [1.0, 4.0, -2.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2, m.nrmse), (0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn shifted_predictor_hand_values() {
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        // brute force: sigma² = ((−1)² + 0 + 1²)/3, sse = 3, sst = 2
        let sigma = (2.0f64 / 3.0).sqrt();
        assert!(close(m.mae, 1.0) && close(m.rmse, 1.0));
        assert!(close(m.sigma, sigma));
        assert!(close(m.nrmse, 1.0 / sigma));
        assert!(close(m.r2, 1.0 - 3.0 / 2.0));
        assert!((m.nrmse - 1.22474).abs() < 1e-5);
    }

    #[test]
    fn constant_targets_give_sentinel() {
        let m = compute_metrics(&[2.0, 2.0], &[2.0, 2.5]).unwrap();
        assert_eq!(m.sigma, 0.0);
        assert!(m.nrmse.is_infinite());
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn point(s: f64, n: usize, nrmse: f64) -> LearningCurvePoint {
        LearningCurvePoint {
            scale_factor: s,
            n_points: n,
            metrics: Metrics { sigma: 1.0, mae: nrmse / 2.0, r2: 1.0 - nrmse * nrmse, rmse: nrmse, nrmse },
            per_fold: vec![],
        }
    }

    #[test]
    fn monotone_curve_is_not_flagged() {
        let pts = vec![point(0.1, 10, 0.7), point(0.1, 100, 0.3), point(0.1, 1000, 0.1)];
        let rows = stats_table(&pts, 10, 1000).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].flagged);
        assert_eq!(rows[0].best, rows[0].at_max);
        assert_eq!(rows[0].original.nrmse, 0.7);
    }

    #[test]
    fn original_beating_max_is_flagged() {
        // 0.54 at the original size against 0.71 at the largest
        let pts = vec![point(0.5, 10, 0.54), point(0.5, 100, 0.75), point(0.5, 1000, 0.71), point(0.01, 10, 0.6), point(0.01, 1000, 0.05)];
        let rows = stats_table(&pts, 10, 1000).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].flagged);
        assert_eq!(rows[0].best.nrmse, 0.54);
        assert_eq!(rows[0].best_n_points, 10);
        assert!(!rows[1].flagged);
        assert!(stats_table(&pts, 10, 5000).is_err());
    }

    #[test]
    fn cv_pools_every_row() {
        let x = ndarray::Array2::from_shape_fn((40, 2), |(i, j)| ((i * 3 + j * 11) % 40) as f64 / 39.0);
        let y = x.map_axis(ndarray::Axis(1), |r| 0.1 + 0.5 * r[0]);
        let d = Dataset::new(x, y, Dataset::default_feature_names(2), "sigma_A", SpaceTag::Scaled).unwrap();
        let cfg = MlpConfig::default().with_hidden(&[8]).with_epochs(20);
        let cv = cross_validate_model_b(&d, 5, &cfg, 3).unwrap();
        assert_eq!(cv.oof_predictions.len(), 40);
        assert_eq!(cv.per_fold.len(), 5);
        assert!((cv.metrics.nrmse.powi(2) + cv.metrics.r2 - 1.0).abs() < 1e-9);
        assert!(cv.metrics.mae <= cv.metrics.rmse);
        assert_eq!(cv, cross_validate_model_b(&d, 5, &cfg, 3).unwrap());
    }

    #[test]
    fn constant_error_bars_cross_validate_to_sentinel() {
        let x = ndarray::Array2::from_shape_fn((30, 2), |(i, j)| ((i + j * 7) % 30) as f64 / 29.0);
        let d = Dataset::new(x, Array1::from_elem(30, 0.3), Dataset::default_feature_names(2), "sigma_A", SpaceTag::Scaled).unwrap();
        let cfg = MlpConfig::default().with_hidden(&[8]).with_epochs(5000);
        let cv = cross_validate_model_b(&d, 5, &cfg, 0).unwrap();
        assert_eq!(cv.metrics.sigma, 0.0);
        assert!(cv.metrics.nrmse.is_infinite());
        assert!(cv.metrics.mae < 0.01, "{:?}", cv.metrics);
    }
}
