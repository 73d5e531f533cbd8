//! Out-of-distribution demo: a Bayesian LeNet trained on an in-distribution
//! image subset scores held-out in-distribution and out-of-distribution
//! images by predictive entropy.

use serde::{Deserialize, Serialize};

use super::idx::IdxImages;
use super::metrics::{metric_suite, row_entropies, Metrics, OodScores, Predictions};
use super::runner::{Method, ModelKind};
use crate::autodiff_nn::{Activation, LossKind, Tensor};
use crate::bayes_layers::{BayesNet, PriorConfig};
use crate::distributions::RngState;
use crate::error::{Error, Result};
use crate::inference::{predict_with, train_svgi, train_svi, Dataset, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    /// Leading in-distribution images used for training.
    pub n_train: usize,
    /// In-distribution images following the training block, for evaluation.
    pub n_test: usize,
    /// Leading out-of-distribution images.
    pub n_ood: usize,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub prior: PriorConfig,
    pub seed: u64,
}

impl Default for OodConfig {
    fn default() -> Self {
        OodConfig {
            n_train: 10_000,
            n_test: 2_000,
            n_ood: 2_000,
            model: ModelKind::R2D2_SVGI,
            train: TrainConfig { loss: LossKind::CrossEntropy, ..TrainConfig::default() },
            // He initialization under the 1/sqrt(d_in) layer scaling
            prior: PriorConfig { mu_init_sd: std::f64::consts::SQRT_2, ..PriorConfig::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodResult {
    pub model: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub epochs_run: usize,
    /// Accuracy and macro-F1 on the in-distribution test block; AUROC and
    /// AUPR with out-of-distribution as the positive class.
    pub metrics: Metrics,
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::domain("one_hot", format!("label {l} with {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

pub fn run_ood(config: &OodConfig, in_dist: &IdxImages, labels: &[usize], out_dist: &IdxImages) -> Result<OodResult> {
    if (in_dist.rows, in_dist.cols) != (28, 28) || (out_dist.rows, out_dist.cols) != (28, 28) {
        return Err(Error::Config("the LeNet demo expects 28 x 28 images".into()));
    }
    if in_dist.len() < config.n_train + config.n_test || out_dist.len() < config.n_ood {
        return Err(Error::Config(format!(
            "need {} in-distribution and {} out-of-distribution images, have {} and {}",
            config.n_train + config.n_test,
            config.n_ood,
            in_dist.len(),
            out_dist.len()
        )));
    }
    if labels.len() != in_dist.len() {
        return Err(Error::Length { expected: in_dist.len(), got: labels.len() });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let train = Dataset::new(
        in_dist.slice(0, config.n_train).images,
        one_hot(&labels[..config.n_train], classes)?,
    )?;
    let test = in_dist.slice(config.n_train, config.n_train + config.n_test).images;
    let test_labels = &labels[config.n_train..config.n_train + config.n_test];
    let ood = out_dist.slice(0, config.n_ood).images;

    let seed = config.seed;
    let prior = PriorConfig { family: config.model.prior, ..config.prior.clone() };
    let net = BayesNet::lenet(classes, prior, &RngState::new(seed, 1))?;
    let train_cfg = TrainConfig { seed, loss: LossKind::CrossEntropy, ..config.train.clone() };
    let (net, reports) = match config.model.method {
        Method::Svgi => train_svgi(&net, &train, &train_cfg, &RngState::new(seed, 2))?,
        Method::Svi => train_svi(&net, &train, &train_cfg, &RngState::new(seed, 2))?,
        other => return Err(Error::Config(format!("the OOD demo supports svgi and svi, not {other:?}"))),
    };
    let mc = train_cfg.mc_eval_samples;
    let probs_in = predict_with(&net, &test, mc, &RngState::new(seed, 3), Some(Activation::Softmax))?.mean;
    let probs_out = predict_with(&net, &ood, mc, &RngState::new(seed, 4), Some(Activation::Softmax))?.mean;
    let entropy_in = row_entropies(&probs_in)?;
    let entropy_out = row_entropies(&probs_out)?;
    let mut metrics = metric_suite(
        Predictions::Classification { probs: &probs_in, labels: test_labels },
        Some(OodScores { in_dist: &entropy_in, out_dist: &entropy_out }),
    )?;
    metrics.mean_entropy_out = Some(entropy_out.iter().sum::<f64>() / entropy_out.len() as f64);
    metrics.check_finite()?;
    Ok(OodResult {
        model: config.model.to_string(),
        seed,
        n_train: config.n_train,
        n_test: config.n_test,
        n_ood: config.n_ood,
        epochs_run: reports.len(),
        metrics,
    })
}
