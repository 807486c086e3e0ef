//! End-to-end run and the individually invokable stages behind it.
//!
//! Stages share state through `<out>/bundle.json`: `train-a` creates it and
//! each later stage loads it, adds its part and saves it again. Every seed
//! is a substream of `RunConfig::seed`, so a stage rerun on its own writes
//! the same bytes as the same stage inside `pipeline`.

use std::path::{Path, PathBuf};

use log::info;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::bundle::{load_bundle, save_bundle, ModelBundle, Provenance};
use super::config::{DatasetSource, RunConfig};
use super::plot::emit_curve_plot;
use crate::augment::{build_beta_dataset, generate_augmented_features, write_augmented_csv, AugmentationConfig};
use crate::data::{apply_scaler, fit_scaler, write_dataset_csv, Dataset, MinMaxScaler};
use crate::distill::{train_model_b, DistilledModel};
use crate::ensemble::{calibrate_by_cv, train_ensemble_with, EnsembleModel};
use crate::error::{Error, Result};
use crate::eval::{
    augmentation_seed, benchmark_inference, cross_validate_model_b, run_learning_curve, stats_table,
    write_learning_curve_csv, write_stats_table_csv, BenchmarkResult, CurveSettings, LearningCurvePoint, StatsRow,
};
use crate::nn::{train_mlp, MlpModel};
use crate::rng::{self, derive_seed};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const CURVE_CSV: &str = "learning_curve.csv";
pub const STATS_CSV: &str = "stats_table.csv";
pub const CURVE_SVG: &str = "learning_curve.svg";
pub const AUGMENTED_CSV: &str = "augmented.csv";
pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const BENCH_JSON: &str = "bench.json";
pub const SYNTH_CSV: &str = "dataset.csv";

const KEY_MODEL_A: u64 = 1;
const KEY_ENSEMBLE: u64 = 2;
const KEY_CALIBRATION: u64 = 3;
const KEY_CURVE: u64 = 4;
const KEY_MODEL_B: u64 = 5;
const KEY_EVALUATE: u64 = 6;
const KEY_BENCH: u64 = 7;

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(format!("stage '{name}'")))
}

/// Raw data, its scaler and the α-scaled copy.
struct Prepared {
    raw: Dataset,
    scaler: MinMaxScaler,
    scaled: Dataset,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    let raw = stage("ingest", config.dataset.load())?;
    info!("ingest: {} rows x {} features from {}", raw.n_rows(), raw.n_features(), config.dataset_name);
    let scaler = stage("scale", fit_scaler(&raw))?;
    let scaled = stage("scale", apply_scaler(&scaler, &raw))?;
    info!("scale: {} degenerate columns", scaler.degenerate_cols.len());
    Ok(Prepared { raw, scaler, scaled })
}

fn train_model_a(config: &RunConfig, p: &Prepared) -> Result<MlpModel> {
    let cfg = config.model_a.reseeded(config.seed, &[KEY_MODEL_A]);
    let (model, report) = stage(
        "train A",
        train_mlp(p.scaled.features.view(), p.scaled.targets.view(), &cfg),
    )?;
    info!("train A: {} parameters, final training MSE {:.6}", model.param_count(), report.final_loss);
    Ok(model)
}

fn train_and_calibrate(config: &RunConfig, p: &Prepared) -> Result<EnsembleModel> {
    let e = train_uncalibrated(config, p)?;
    calibrate(config, p, e)
}

fn train_uncalibrated(config: &RunConfig, p: &Prepared) -> Result<EnsembleModel> {
    let s = &config.ensemble;
    let e = stage(
        "train ensemble",
        train_ensemble_with(&p.scaled, s.members, &config.model_a, derive_seed(config.seed, &[KEY_ENSEMBLE]), s.bootstrap),
    )?;
    info!("train ensemble: {} members, {} parameters", e.n_members(), e.param_count());
    Ok(e)
}

fn calibrate(config: &RunConfig, p: &Prepared, e: EnsembleModel) -> Result<EnsembleModel> {
    let s = &config.ensemble;
    let cal = stage(
        "calibrate",
        calibrate_by_cv(
            &p.scaled,
            s.members,
            &config.model_a,
            derive_seed(config.seed, &[KEY_CALIBRATION]),
            s.calibration_folds,
            s.calibration_bins,
            s.bootstrap,
        ),
    )?;
    info!("calibrate: sigma_cal = {:.6}*sigma_raw + {:.6} ({})", cal.a, cal.b, cal.method_tag);
    Ok(e.with_calibration(cal))
}

fn curve_seed(config: &RunConfig) -> u64 {
    derive_seed(config.seed, &[KEY_CURVE])
}

/// Augmented, labelled set the bundled Model B is fitted on. Its rows are a
/// prefix of the learning curve's set for the same scale factor.
fn distill_set(config: &RunConfig, p: &Prepared, e: &EnsembleModel) -> Result<(AugmentationConfig, Dataset)> {
    let (s, n) = config.distill_target(p.raw.n_rows());
    let aug_cfg = AugmentationConfig {
        scale_factor: s,
        n_total: n,
        seed: augmentation_seed(curve_seed(config), s),
        allocation: config.augmentation.allocation,
    };
    let aug = stage("augment", generate_augmented_features(p.scaled.features.view(), &aug_cfg))?;
    info!("augment: {} rows at s = {s} ({} original)", aug.n_rows(), aug.n_original());
    let beta = stage("label", build_beta_dataset(&aug, e, &p.raw.feature_names))?;
    let mean = beta.targets.mean().unwrap_or(0.0);
    info!("label: mean sigma_A {mean:.6}");
    Ok((aug_cfg, beta))
}

fn write_augmented(out: &Path, p: &Prepared, aug_cfg: &AugmentationConfig, beta: &Dataset) -> Result<()> {
    let aug = generate_augmented_features(p.scaled.features.view(), aug_cfg)?;
    write_augmented_csv(&aug, &beta.feature_names, beta.targets.as_slice(), out.join(AUGMENTED_CSV))
}

fn fit_model_b(config: &RunConfig, beta: &Dataset) -> Result<DistilledModel> {
    let cfg = config.model_b.reseeded(config.seed, &[KEY_MODEL_B]);
    let b = stage("train B", train_model_b(beta, &cfg))?;
    info!("train B: {} parameters on {} rows", b.net.param_count(), beta.n_rows());
    Ok(b)
}

fn curve_settings(config: &RunConfig, n_original: usize) -> CurveSettings {
    CurveSettings {
        scale_factors: config.augmentation.scale_factors.clone(),
        sizes: config.curve_sizes(n_original),
        k_folds: config.cv_folds,
        allocation: config.augmentation.allocation,
        model_b: config.model_b.clone(),
        seed: curve_seed(config),
    }
}

#[derive(Debug)]
pub struct CurveReport {
    pub points: Vec<LearningCurvePoint>,
    pub stats: Vec<StatsRow>,
}

fn evaluate_curve(config: &RunConfig, p: &Prepared, e: &EnsembleModel, out: &Path) -> Result<CurveReport> {
    let n0 = p.raw.n_rows();
    let settings = curve_settings(config, n0);
    let report_n = config.report_size(n0)?;
    let on_point = |pt: &LearningCurvePoint| log::debug!("curve: s={} n={} nrmse={:.4}", pt.scale_factor, pt.n_points, pt.metrics.nrmse);
    let points = stage(
        "evaluate",
        run_learning_curve(p.scaled.features.view(), &p.raw.feature_names, e, &settings, &on_point),
    )?;
    let stats = stage("evaluate", stats_table(&points, n0, report_n))?;
    for row in &stats {
        info!(
            "evaluate: s = {} nrmse {:.4} (n = {n0}) / {:.4} (n = {report_n}){}",
            row.scale_factor,
            row.original.nrmse,
            row.at_max.nrmse,
            if row.flagged { " *" } else { "" }
        );
    }
    stage("persist", write_learning_curve_csv(&points, &config.dataset_name, out.join(CURVE_CSV)))?;
    stage("persist", write_stats_table_csv(&stats, &config.dataset_name, out.join(STATS_CSV)))?;
    stage("persist", emit_curve_plot(&points, out.join(CURVE_SVG)))?;
    Ok(CurveReport { points, stats })
}

fn new_bundle(config: &RunConfig, p: &Prepared, model_a: MlpModel) -> ModelBundle {
    ModelBundle {
        feature_names: p.raw.feature_names.clone(),
        target_name: p.raw.target_name.clone(),
        alpha_scaler: p.scaler.clone(),
        model_a: Some(model_a),
        ensemble: None,
        model_b: None,
        provenance: Provenance {
            config: config.clone(),
            data_hash: p.raw.content_hash(),
        },
    }
}

fn create_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn persist(bundle: &ModelBundle, out: &Path) -> Result<()> {
    stage("persist", save_bundle(bundle, out.join(BUNDLE_FILE)))?;
    info!("persist: {} ({})", out.join(BUNDLE_FILE).display(), bundle.status());
    Ok(())
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub bundle: ModelBundle,
    pub curve: CurveReport,
}

/// ingest → scale → train A → train and calibrate the ensemble → augment →
/// label → train B → learning curve → persist. Writes the bundle, the
/// augmented set, both CSV reports and the curve plot into `out`.
pub fn cmd_pipeline(config: &RunConfig, out: &Path) -> Result<PipelineOutput> {
    config.validate()?;
    create_out_dir(out)?;
    let p = prepare(config)?;
    let model_a = train_model_a(config, &p)?;
    let e = train_and_calibrate(config, &p)?;
    let (aug_cfg, beta) = distill_set(config, &p, &e)?;
    stage("augment", write_augmented(out, &p, &aug_cfg, &beta))?;
    let b = fit_model_b(config, &beta)?;
    let curve = evaluate_curve(config, &p, &e, out)?;
    let mut bundle = new_bundle(config, &p, model_a);
    bundle.ensemble = Some(e);
    bundle.model_b = Some(b);
    persist(&bundle, out)?;
    Ok(PipelineOutput { bundle, curve })
}

/// Loads `<out>/bundle.json` and checks it was produced from the same data.
fn load_stage_bundle(out: &Path, p: &Prepared) -> Result<ModelBundle> {
    let bundle = load_bundle(out.join(BUNDLE_FILE))
        .map_err(|e| e.context(format!("run `train-a` first to create {}", out.join(BUNDLE_FILE).display())))?;
    if bundle.provenance.data_hash != p.raw.content_hash() {
        return Err(Error::invalid("bundle was trained on different data than the configured dataset"));
    }
    Ok(bundle)
}

fn require_ensemble(bundle: &ModelBundle) -> Result<&EnsembleModel> {
    bundle
        .ensemble
        .as_ref()
        .ok_or_else(|| Error::invalid("bundle has no ensemble; run `train-ensemble` first"))
}

pub fn cmd_train_a(config: &RunConfig, out: &Path) -> Result<ModelBundle> {
    config.validate()?;
    create_out_dir(out)?;
    let p = prepare(config)?;
    let model_a = train_model_a(config, &p)?;
    let bundle = new_bundle(config, &p, model_a);
    persist(&bundle, out)?;
    Ok(bundle)
}

/// Trains the ensemble with identity calibration; `calibrate` fits it.
pub fn cmd_train_ensemble(config: &RunConfig, out: &Path) -> Result<ModelBundle> {
    config.validate()?;
    let p = prepare(config)?;
    let mut bundle = load_stage_bundle(out, &p)?;
    bundle.ensemble = Some(train_uncalibrated(config, &p)?);
    bundle.model_b = None;
    persist(&bundle, out)?;
    Ok(bundle)
}

pub fn cmd_calibrate(config: &RunConfig, out: &Path) -> Result<ModelBundle> {
    config.validate()?;
    let p = prepare(config)?;
    let mut bundle = load_stage_bundle(out, &p)?;
    let e = require_ensemble(&bundle)?.clone();
    bundle.ensemble = Some(calibrate(config, &p, e)?);
    bundle.model_b = None;
    persist(&bundle, out)?;
    Ok(bundle)
}

/// Writes the labelled distillation set to `<out>/augmented.csv`.
pub fn cmd_augment(config: &RunConfig, out: &Path) -> Result<Dataset> {
    config.validate()?;
    let p = prepare(config)?;
    let bundle = load_stage_bundle(out, &p)?;
    let (aug_cfg, beta) = distill_set(config, &p, require_ensemble(&bundle)?)?;
    stage("augment", write_augmented(out, &p, &aug_cfg, &beta))?;
    Ok(beta)
}

pub fn cmd_distill(config: &RunConfig, out: &Path) -> Result<ModelBundle> {
    config.validate()?;
    let p = prepare(config)?;
    let mut bundle = load_stage_bundle(out, &p)?;
    let (_, beta) = distill_set(config, &p, require_ensemble(&bundle)?)?;
    bundle.model_b = Some(fit_model_b(config, &beta)?);
    persist(&bundle, out)?;
    Ok(bundle)
}

/// k-fold CV of Model B on the distillation set, one row in
/// `<out>/evaluation.csv`.
pub fn cmd_evaluate(config: &RunConfig, out: &Path) -> Result<LearningCurvePoint> {
    config.validate()?;
    let p = prepare(config)?;
    let bundle = load_stage_bundle(out, &p)?;
    let (aug_cfg, beta) = distill_set(config, &p, require_ensemble(&bundle)?)?;
    let cv = stage(
        "evaluate",
        cross_validate_model_b(&beta, config.cv_folds, &config.model_b, derive_seed(config.seed, &[KEY_EVALUATE])),
    )?;
    let point = LearningCurvePoint {
        scale_factor: aug_cfg.scale_factor,
        n_points: beta.n_rows(),
        metrics: cv.metrics,
        per_fold: cv.per_fold,
    };
    info!("evaluate: nrmse {:.4}, r2 {:.4}", point.metrics.nrmse, point.metrics.r2);
    stage("persist", write_learning_curve_csv(std::slice::from_ref(&point), &config.dataset_name, out.join(EVALUATION_CSV)))?;
    Ok(point)
}

pub fn cmd_curve(config: &RunConfig, out: &Path) -> Result<CurveReport> {
    config.validate()?;
    let p = prepare(config)?;
    let bundle = load_stage_bundle(out, &p)?;
    evaluate_curve(config, &p, require_ensemble(&bundle)?, out)
}

/// Timing comparison of ensemble and distilled error bars on random
/// α-space rows. Timings vary run to run, so this is not part of the
/// deterministic pipeline outputs.
pub fn cmd_bench(config: &RunConfig, bundle_path: &Path, out: Option<&Path>) -> Result<BenchmarkResult> {
    let bundle = load_bundle(bundle_path)?;
    let e = require_ensemble(&bundle)?;
    let b = bundle
        .model_b
        .as_ref()
        .ok_or_else(|| Error::invalid("bundle is not distilled; run `distill` first"))?;
    let batch = random_unit_rows(config.bench.batch_size, bundle.n_features(), derive_seed(config.seed, &[KEY_BENCH]));
    let result = stage("bench", benchmark_inference(e, b, batch.view(), config.bench.repeats))?;
    info!(
        "bench: ensemble {:.0} ns/row, distilled {:.0} ns/row, speedup {:.1}x",
        result.ensemble_ns_per_row, result.distilled_ns_per_row, result.speedup
    );
    if let Some(out) = out {
        create_out_dir(out)?;
        let path = out.join(BENCH_JSON);
        std::fs::write(&path, serde_json::to_string_pretty(&result)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}

/// Rows drawn uniformly from the unit cube.
pub fn random_unit_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, &[]);
    Array2::from_shape_fn((n, d), |_| r.random::<f64>())
}

/// Writes the configured synthetic dataset as CSV.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<PathBuf> {
    let spec = match &config.dataset {
        DatasetSource::Synthetic { spec } => spec,
        DatasetSource::Csv { .. } => return Err(Error::invalid("`synth` needs a synthetic dataset source")),
    };
    let d = crate::synth::generate_synthetic(spec)?;
    create_out_dir(out)?;
    let path = out.join(SYNTH_CSV);
    write_dataset_csv(&d, &path)?;
    info!("synth: {} rows x {} features -> {}", d.n_rows(), d.n_features(), path.display());
    Ok(path)
}

fn read_input_rows(bundle: &ModelBundle, path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let missing: Vec<&str> = bundle
        .feature_names
        .iter()
        .filter(|n| !header.contains(n))
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = header
        .iter()
        .filter(|h| !bundle.feature_names.contains(h) && **h != bundle.target_name)
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(csv_err(format!(
            "input columns do not match the bundle: missing columns {missing:?}, extra columns {extra:?}"
        )));
    }
    let positions: Vec<usize> = bundle
        .feature_names
        .iter()
        .map(|n| header.iter().position(|h| h == n).expect("checked above"))
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        for (&pos, name) in positions.iter().zip(&bundle.feature_names) {
            let cell = record.get(pos).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| csv_err(format!("row {}, column '{name}': '{cell}' is not a finite number", r + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, positions.len()), values).expect("row-major fill");
    Ok((bundle.feature_names.clone(), x))
}

fn write_predictions(path: &Path, names: &[String], x: ArrayView2<f64>, y_hat: &[f64], sigma_hat: &[f64]) -> Result<()> {
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = names.to_vec();
    header.extend(["y_hat".to_string(), "sigma_hat".to_string()]);
    w.write_record(&header).map_err(err)?;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(y_hat[i].to_string());
        rec.push(sigma_hat[i].to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Values from Model A and error bars from Model B for every row of
/// `input_csv`. The ensemble is never evaluated.
pub fn cmd_predict(bundle_path: &Path, input_csv: &Path, output_csv: &Path) -> Result<usize> {
    let bundle = load_bundle(bundle_path)?;
    let (names, x) = read_input_rows(&bundle, input_csv)?;
    let preds = bundle.predict(x.view())?;
    let y_hat: Vec<f64> = preds.iter().map(|p| p.value).collect();
    let sigma_hat: Vec<f64> = preds.iter().map(|p| p.error_bar).collect();
    write_predictions(output_csv, &names, x.view(), &y_hat, &sigma_hat)?;
    info!("predict: {} rows -> {}", preds.len(), output_csv.display());
    Ok(preds.len())
}
