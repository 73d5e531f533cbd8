//! The regression benchmark: a grid of (model, depth, seed) runs on one
//! scenario, executed in a bounded work pool and written out in a stable
//! order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{shrinkage_density_dump, write_density_csv, DensityDump, DensityGrid};
use super::metrics::{metric_suite, Metrics, Predictions};
use super::scenario::{generate_scenario, Scenario, ScenarioId, SplitData, Standardizer};
use crate::autodiff_nn::Activation;
use crate::bayes_layers::{save_checkpoint, BayesNet, PriorConfig, PriorFamily};
use crate::distributions::RngState;
use crate::error::{Error, Result};
use crate::inference::{
    append_jsonl, hmc_oracle, inference_error, predict, predict_samples, train_sgld, train_svgi, train_svi, Dataset,
    HmcConfig, PosteriorSamples, Prediction, SgldConfig, TrainConfig, HMC_MAX_PARAMS,
};

pub const CONFIG_VERSION: u32 = 1;

/// Caps the benchmark work pool.
pub const THREADS_ENV: &str = "BENCH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Svgi,
    Svi,
    Sgld,
    Hmc,
}

/// A prior family paired with an inference method, written `prior-method`
/// (`r2d2-svgi`, `gaussian-svi`, `horseshoe-sgld`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelKind {
    pub prior: PriorFamily,
    pub method: Method,
}

impl ModelKind {
    pub const R2D2_SVGI: ModelKind = ModelKind { prior: PriorFamily::R2d2, method: Method::Svgi };
    pub const GAUSSIAN_SVI: ModelKind = ModelKind { prior: PriorFamily::Gaussian, method: Method::Svi };
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prior = match self.prior {
            PriorFamily::R2d2 => "r2d2",
            PriorFamily::Gaussian => "gaussian",
            PriorFamily::Horseshoe => "horseshoe",
            PriorFamily::SpikeSlab => "spike_slab",
        };
        let method = match self.method {
            Method::Svgi => "svgi",
            Method::Svi => "svi",
            Method::Sgld => "sgld",
            Method::Hmc => "hmc",
        };
        write!(f, "{prior}-{method}")
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown model {s:?}; expected prior-method, e.g. r2d2-svgi"));
        let (p, m) = s.split_once('-').ok_or_else(bad)?;
        let prior = match p {
            "r2d2" => PriorFamily::R2d2,
            "gauss" | "gaussian" => PriorFamily::Gaussian,
            "horseshoe" => PriorFamily::Horseshoe,
            "spike_slab" => PriorFamily::SpikeSlab,
            _ => return Err(bad()),
        };
        let method = match m {
            "svgi" => Method::Svgi,
            "svi" => Method::Svi,
            "sgld" => Method::Sgld,
            "hmc" => Method::Hmc,
            _ => return Err(bad()),
        };
        if method == Method::Svgi && prior != PriorFamily::R2d2 {
            return Err(Error::Config(format!("{s}: Gibbs sweeps need the r2d2 prior")));
        }
        Ok(ModelKind { prior, method })
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(m: ModelKind) -> String {
        m.to_string()
    }
}

/// The scenario of a benchmark; each run draws its data with the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

fn default_noise_sd() -> f64 {
    3.0
}

impl ScenarioSpec {
    pub fn with_seed(&self, seed: u64) -> Scenario {
        Scenario { id: self.id, n: self.n, noise_sd: self.noise_sd, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub models: Vec<ModelKind>,
    /// Hidden-layer counts; 0 is linear regression.
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_width() -> usize {
    32
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Smallest-magnitude first-layer weights to dump; 0 disables dumps.
    pub density_k: usize,
    pub density_grid: DensityGrid,
    /// Compare posterior means against an HMC oracle where the model has at
    /// most [`HMC_MAX_PARAMS`] parameters.
    pub inference_error: bool,
    /// Per-run test-set prediction intervals.
    pub prediction_dump: bool,
    /// Save each trained network under `checkpoints/`.
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { density_k: 5, density_grid: DensityGrid::default(), inference_error: false, prediction_dump: true, checkpoints: false }
    }
}

/// A benchmark configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub version: u32,
    pub scenario: ScenarioSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub sgld: SgldConfig,
    #[serde(default)]
    pub hmc: HmcConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        BenchConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version)));
        }
        self.scenario.with_seed(0).validate()?;
        if self.grid.models.is_empty() || self.grid.depths.is_empty() || self.grid.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one model, depth and seed".into()));
        }
        if self.grid.width == 0 {
            return Err(Error::Config("grid width must be at least 1".into()));
        }
        self.train.validate()?;
        self.prior.validate()
    }

    /// Runs in output order: by model name, then depth, then seed.
    pub fn runs(&self) -> Vec<RegressionRun> {
        let mut runs = Vec::new();
        for &model in &self.grid.models {
            for &depth in &self.grid.depths {
                for &seed in &self.grid.seeds {
                    runs.push(RegressionRun {
                        scenario: self.scenario.with_seed(seed),
                        model,
                        depth,
                        width: self.grid.width,
                        activation: self.grid.activation,
                        train: TrainConfig { seed, ..self.train.clone() },
                        prior: PriorConfig { family: model.prior, ..self.prior.clone() },
                        sgld: self.sgld.clone(),
                        hmc: self.hmc.clone(),
                        output: self.output.clone(),
                    });
                }
            }
        }
        runs.sort_by(|a, b| (a.model.to_string(), a.depth, a.scenario.seed).cmp(&(b.model.to_string(), b.depth, b.scenario.seed)));
        runs.dedup_by(|a, b| a.key() == b.key() && a.scenario.seed == b.scenario.seed);
        runs
    }
}

/// One fully specified regression run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRun {
    pub scenario: Scenario,
    pub model: ModelKind,
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub train: TrainConfig,
    pub prior: PriorConfig,
    pub sgld: SgldConfig,
    pub hmc: HmcConfig,
    pub output: OutputConfig,
}

impl RegressionRun {
    /// Paper defaults for `model` at `depth` on scenario `id` with `n`
    /// examples.
    pub fn new(id: ScenarioId, n: usize, model: ModelKind, depth: usize, seed: u64) -> Self {
        RegressionRun {
            scenario: Scenario::new(id, n, seed),
            model,
            depth,
            width: default_width(),
            activation: default_activation(),
            train: TrainConfig { seed, ..TrainConfig::default() },
            prior: PriorConfig::with_family(model.prior),
            sgld: SgldConfig::default(),
            hmc: HmcConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Grid cell shared by every seed, e.g. `r2d2-svgi_L2`.
    pub fn key(&self) -> String {
        format!("{}_L{}", self.model, self.depth)
    }

    fn stem(&self) -> String {
        format!("{}_seed{}", self.key(), self.scenario.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub depth: usize,
    pub width: usize,
    pub scenario: ScenarioId,
    pub n: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub metrics: Metrics,
    /// Mean predictive standard deviation on the test split, original units.
    pub mean_pred_sd: Option<f64>,
    pub epochs_run: Option<usize>,
    pub log_path: Option<String>,
    pub error: Option<String>,
}

/// A finished run with the artifacts kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    pub net: BayesNet,
    pub split: SplitData,
    /// Test-split predictions in original units.
    pub prediction: Prediction,
    pub densities: Vec<DensityDump>,
}

const STREAM_DATA: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_PREDICT: u64 = 3;
const STREAM_DENSITY: u64 = 4;
const STREAM_ORACLE: u64 = 5;

/// Trains and evaluates one run. Inputs and targets are standardized with
/// training statistics; metrics are reported in original units. With
/// `out_dir`, the epoch log and dumps are written below it.
pub fn run_regression(run: &RegressionRun, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let seed = run.scenario.seed;
    let split = generate_scenario(&run.scenario, &mut RngState::new(seed, STREAM_DATA))?;
    let sx = Standardizer::fit(&split.train.x)?;
    let sy = Standardizer::fit(&split.train.y)?;
    let train = Dataset::new(sx.apply(&split.train.x), sy.apply(&split.train.y))?;
    let test_x = sx.apply(&split.test.x);
    let init = BayesNet::mlp(
        run.scenario.input_dim(),
        run.width,
        run.depth,
        1,
        run.activation,
        PriorConfig { family: run.model.prior, ..run.prior.clone() },
        &RngState::new(seed, STREAM_INIT),
    )?;
    let train_rng = RngState::new(seed, STREAM_TRAIN);
    let predict_rng = RngState::new(seed, STREAM_PREDICT);
    let mc = run.train.mc_eval_samples;
    let mut log_path = None;
    let mut epochs_run = None;
    let (net, prediction, draws) = match run.model.method {
        Method::Svgi | Method::Svi => {
            let (net, reports) = if run.model.method == Method::Svgi {
                train_svgi(&init, &train, &run.train, &train_rng)?
            } else {
                train_svi(&init, &train, &run.train, &train_rng)?
            };
            epochs_run = Some(reports.len());
            if let Some(dir) = out_dir {
                let path = dir.join("logs").join(format!("{}.jsonl", run.stem()));
                std::fs::create_dir_all(path.parent().expect("joined path"))?;
                let _ = std::fs::remove_file(&path);
                append_jsonl(&path, &reports)?;
                log_path = Some(relative(dir, &path));
            }
            let pred = predict(&net, &test_x, mc, &predict_rng)?;
            let draws = PosteriorSamples::from_variational(&net, mc, &RngState::new(seed, STREAM_DENSITY))?;
            (net, pred, draws)
        }
        Method::Sgld | Method::Hmc => {
            let (mut net, samples) = if run.model.method == Method::Sgld {
                let cfg = SgldConfig { loss: run.train.loss, ..run.sgld.clone() };
                train_sgld(&init, &train, &cfg, &train_rng)?
            } else {
                let cfg = HmcConfig { loss: run.train.loss, ..run.hmc.clone() };
                (init.clone(), hmc_oracle(&init, &train, &cfg, &train_rng)?.0)
            };
            // the density ranking reads E[w] from the means
            set_means(&mut net, &samples.mean())?;
            let pred = predict_samples(&net, &test_x, &samples, None)?;
            (net, pred, samples)
        }
    };
    let mean = sy.invert(&prediction.mean);
    let sd_scale = sy.sd[0];
    let prediction = Prediction {
        variance: prediction.variance.map(|v| v * sd_scale * sd_scale),
        samples: prediction.samples.iter().map(|s| sy.invert(s)).collect(),
        mean,
    };
    let mut metrics =
        metric_suite(Predictions::Regression { mean: prediction.mean.data(), target: split.test.y.data() }, None)?;
    if run.output.inference_error && init.num_params() <= HMC_MAX_PARAMS {
        let cfg = HmcConfig { loss: run.train.loss, ..run.hmc.clone() };
        let (oracle, _) = hmc_oracle(&init, &train, &cfg, &RngState::new(seed, STREAM_ORACLE))?;
        metrics.inference_error = Some(inference_error(&net.flat_means(), &oracle.mean())?);
        metrics.check_finite()?;
    }
    let densities = if run.output.density_k > 0 {
        let k = run.output.density_k.min(net.layers[0].weights.mu.len());
        shrinkage_density_dump(&net, &draws, k, &run.output.density_grid)?
    } else {
        Vec::new()
    };
    if let Some(dir) = out_dir {
        if !densities.is_empty() {
            let path = dir.join("densities").join(format!("{}.csv", run.stem()));
            std::fs::create_dir_all(path.parent().expect("joined path"))?;
            write_density_csv(&path, &densities)?;
        }
        if run.output.checkpoints {
            let path = dir.join("checkpoints").join(format!("{}.ckpt", run.stem()));
            std::fs::create_dir_all(path.parent().expect("joined path"))?;
            save_checkpoint(&net, seed, &path)?;
        }
        if run.output.prediction_dump {
            let path = dir.join("predictions").join(format!("{}.csv", run.stem()));
            std::fs::create_dir_all(path.parent().expect("joined path"))?;
            write_prediction_csv(&path, &split.test, &prediction)?;
        }
    }
    let result = RunResult {
        model: run.model.to_string(),
        depth: run.depth,
        width: run.width,
        scenario: run.scenario.id,
        n: run.scenario.n,
        noise_sd: run.scenario.noise_sd,
        seed,
        metrics,
        mean_pred_sd: Some(prediction.mean_sd()),
        epochs_run,
        log_path,
        error: None,
    };
    Ok(RunOutcome { result, net, split, prediction, densities })
}

fn set_means(net: &mut BayesNet, theta: &[f64]) -> Result<()> {
    let parts = net.unflatten(theta)?;
    for (layer, (w, b)) in net.layers.iter_mut().zip(parts) {
        layer.weights.mu = w;
        layer.weights.mu_bias = b;
    }
    Ok(())
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}

/// Test-split prediction intervals: first input column, target, mean,
/// sd and the central 95% normal interval.
pub fn write_prediction_csv(path: &Path, test: &Dataset, pred: &Prediction) -> Result<()> {
    let d = test.x.shape()[1];
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x0", "y", "mean", "sd", "lower", "upper"])?;
    for (i, ((m, v), y)) in pred.mean.data().iter().zip(pred.variance.data()).zip(test.y.data()).enumerate() {
        let sd = v.sqrt();
        let row = [test.x.data()[i * d], *y, *m, sd, m - 1.96 * sd, m + 1.96 * sd];
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean over the successful seeds of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub depth: usize,
    pub runs: usize,
    pub failed: usize,
    pub mse_mean: Option<f64>,
    pub mse_sd: Option<f64>,
    pub pred_sd_mean: Option<f64>,
    pub inference_error_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

/// Worker count from `BENCH_THREADS`, else rayon's default.
pub fn bench_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// Executes the whole grid. A failing run is recorded with its error and
/// the grid continues. With `out_dir`, writes `config.toml`, `runs.jsonl`,
/// `runs.csv`, `summary.csv`, one JSON file per run under `runs/`, and the
/// per-run logs and dumps.
pub fn run_benchmark(config: &BenchConfig, out_dir: Option<&Path>) -> Result<BenchReport> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("runs"))?;
        std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    }
    let runs = config.runs();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = bench_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<RunResult> = pool.install(|| {
        runs.par_iter()
            .map(|run| match run_regression(run, out_dir) {
                Ok(outcome) => outcome.result,
                Err(e) => failed_result(run, &e),
            })
            .collect()
    });
    let summary = summarize(&results);
    if let Some(dir) = out_dir {
        write_outputs(dir, &results, &summary)?;
    }
    Ok(BenchReport { runs: results, summary })
}

fn failed_result(run: &RegressionRun, e: &Error) -> RunResult {
    RunResult {
        model: run.model.to_string(),
        depth: run.depth,
        width: run.width,
        scenario: run.scenario.id,
        n: run.scenario.n,
        noise_sd: run.scenario.noise_sd,
        seed: run.scenario.seed,
        metrics: Metrics::default(),
        mean_pred_sd: None,
        epochs_run: None,
        log_path: None,
        error: Some(e.to_string()),
    }
}

/// Aggregates consecutive runs of the same grid cell; `runs` must be in
/// [`BenchConfig::runs`] order.
pub fn summarize(runs: &[RunResult]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for group in runs.chunk_by(|a, b| a.model == b.model && a.depth == b.depth) {
        let ok: Vec<&RunResult> = group.iter().filter(|r| r.error.is_none()).collect();
        let mean = |f: &dyn Fn(&RunResult) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let mse: Vec<f64> = ok.iter().filter_map(|r| r.metrics.mse).collect();
        let mse_sd = (mse.len() > 1).then(|| {
            let m = mse.iter().sum::<f64>() / mse.len() as f64;
            (mse.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (mse.len() - 1) as f64).sqrt()
        });
        rows.push(SummaryRow {
            model: group[0].model.clone(),
            depth: group[0].depth,
            runs: group.len(),
            failed: group.len() - ok.len(),
            mse_mean: mean(&|r| r.metrics.mse),
            mse_sd,
            pred_sd_mean: mean(&|r| r.mean_pred_sd),
            inference_error_mean: mean(&|r| r.metrics.inference_error),
        });
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

/// Per-run metrics as CSV bytes; identical inputs give identical bytes.
pub fn runs_csv(runs: &[RunResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "depth", "seed", "mse", "mean_pred_sd", "inference_error", "epochs_run", "error"])?;
    for r in runs {
        w.write_record([
            r.model.clone(),
            r.depth.to_string(),
            r.seed.to_string(),
            opt(r.metrics.mse),
            opt(r.mean_pred_sd),
            opt(r.metrics.inference_error),
            r.epochs_run.map_or_else(|| "n/a".to_string(), |e| e.to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "depth", "runs", "failed", "mse_mean", "mse_sd", "pred_sd_mean", "inference_error_mean"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.depth.to_string(),
            r.runs.to_string(),
            r.failed.to_string(),
            opt(r.mse_mean),
            opt(r.mse_sd),
            opt(r.pred_sd_mean),
            opt(r.inference_error_mean),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn write_outputs(dir: &Path, runs: &[RunResult], summary: &[SummaryRow]) -> Result<()> {
    let mut jsonl = String::new();
    for r in runs {
        let line = serde_json::to_string(r)?;
        jsonl.push_str(&line);
        jsonl.push('\n');
        let name: PathBuf = dir.join("runs").join(format!("{}_L{}_seed{}.json", r.model, r.depth, r.seed));
        std::fs::write(name, serde_json::to_string_pretty(r)?)?;
    }
    std::fs::write(dir.join("runs.jsonl"), jsonl)?;
    std::fs::write(dir.join("runs.csv"), runs_csv(runs)?)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(summary)?)?;
    Ok(())
}
