//! Run configuration, model bundles, report plots and the pipeline stages
//! driven by the `errorbar` binary.

pub mod bundle;
pub mod config;
pub mod pipeline;
pub mod plot;

pub use bundle::{load_bundle, save_bundle, ModelBundle, Provenance, FORMAT_VERSION};
pub use config::{AugmentationSettings, BenchSettings, DatasetSource, EnsembleSettings, RunConfig};
pub use pipeline::{
    cmd_augment, cmd_bench, cmd_calibrate, cmd_curve, cmd_distill, cmd_evaluate, cmd_pipeline, cmd_predict, cmd_synth,
    cmd_train_a, cmd_train_ensemble, CurveReport, PipelineOutput,
};
pub use plot::{emit_curve_plot, render_curve_svg};
