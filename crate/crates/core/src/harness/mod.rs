//! Experiment layer: scenarios, metrics, diagnostics, data loading and the
//! benchmark runner.

pub mod density;
pub mod idx;
pub mod metrics;
pub mod ood;
pub mod runner;
pub mod scenario;

pub use density::{kde, shrinkage_density_dump, silverman_bandwidth, write_density_csv, DensityDump, DensityGrid};
pub use idx::{
    labels_path_for, read_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use metrics::{
    accuracy, argmax, aupr, auroc, classification_entropy, macro_f1, max_probability, metric_suite, mse, row_entropies,
    Metrics, OodScores, Predictions,
};
pub use ood::{run_ood, OodConfig, OodResult};
pub use runner::{
    bench_threads, run_benchmark, run_regression, runs_csv, summarize, summary_csv, write_prediction_csv, BenchConfig,
    BenchReport, GridSpec, Method, ModelKind, OutputConfig, RegressionRun, RunOutcome, RunResult, ScenarioSpec,
    SummaryRow, CONFIG_VERSION, THREADS_ENV,
};
pub use scenario::{generate_scenario, write_scenario_csv, scenario_mean, Scenario, ScenarioId, SplitData, Standardizer};
