use serde::{Deserialize, Serialize};

use crate::autodiff_nn::Tensor;
use crate::error::{Error, Result};

/// Tolerance on simplex membership of probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Every metric a run can report. Fields that do not apply to a run are
/// `None`; a single-class AUROC or AUPR is also `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: Option<f64>,
    pub inference_error: Option<f64>,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub mean_entropy_in: Option<f64>,
    pub mean_entropy_out: Option<f64>,
}

impl Metrics {
    pub fn check_finite(&self) -> Result<()> {
        let named = [
            ("mse", self.mse),
            ("inference_error", self.inference_error),
            ("auroc", self.auroc),
            ("aupr", self.aupr),
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
            ("mean_entropy_in", self.mean_entropy_in),
            ("mean_entropy_out", self.mean_entropy_out),
        ];
        for (name, v) in named {
            if let Some(value) = v.filter(|v| !v.is_finite()) {
                return Err(Error::NonFiniteMetric { name, value });
            }
        }
        Ok(())
    }
}

/// What a model produced on the evaluation split.
#[derive(Debug, Clone, Copy)]
pub enum Predictions<'a> {
    Regression { mean: &'a [f64], target: &'a [f64] },
    /// Row-stochastic `[n, K]` class probabilities.
    Classification { probs: &'a Tensor, labels: &'a [usize] },
}

/// Scores of in- and out-of-distribution examples; out-of-distribution is
/// the positive class.
#[derive(Debug, Clone, Copy)]
pub struct OodScores<'a> {
    pub in_dist: &'a [f64],
    pub out_dist: &'a [f64],
}

pub fn metric_suite(pred: Predictions<'_>, ood: Option<OodScores<'_>>) -> Result<Metrics> {
    let mut m = Metrics::default();
    match pred {
        Predictions::Regression { mean, target } => m.mse = Some(mse(mean, target)?),
        Predictions::Classification { probs, labels } => {
            let rows = prob_rows(probs)?;
            if rows.len() != labels.len() {
                return Err(Error::Length { expected: rows.len(), got: labels.len() });
            }
            let predicted: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
            m.accuracy = Some(accuracy(&predicted, labels)?);
            m.macro_f1 = Some(macro_f1(&predicted, labels)?);
            m.mean_entropy_in = Some(mean_entropy(&rows)?);
        }
    }
    if let Some(s) = ood {
        let (scores, labels) = pooled(s);
        m.auroc = auroc(&scores, &labels)?;
        m.aupr = aupr(&scores, &labels)?;
    }
    m.check_finite()?;
    Ok(m)
}

fn pooled(s: OodScores<'_>) -> (Vec<f64>, Vec<bool>) {
    let scores = s.in_dist.iter().chain(s.out_dist).copied().collect();
    let labels = std::iter::repeat_n(false, s.in_dist.len()).chain(std::iter::repeat_n(true, s.out_dist.len())).collect();
    (scores, labels)
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Length { expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::Empty("metric"));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn accuracy(pred: &[usize], target: &[usize]) -> Result<f64> {
    same_len(pred.len(), target.len())?;
    Ok(pred.iter().zip(target).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Unweighted mean of per-class F1 over every class that occurs in either
/// the predictions or the targets.
pub fn macro_f1(pred: &[usize], target: &[usize]) -> Result<f64> {
    same_len(pred.len(), target.len())?;
    let k = pred.iter().chain(target).max().map_or(0, |m| m + 1);
    let (mut tp, mut fp, mut fn_) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&p, &t) in pred.iter().zip(target) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| tp[c] + fp[c] + fn_[c] > 0).collect();
    let f1 = |c: usize| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64;
    Ok(present.iter().map(|&c| f1(c)).sum::<f64>() / present.len() as f64)
}

/// Mann–Whitney AUROC, `P(s_pos > s_neg) + P(s_pos = s_neg) / 2`, from
/// tie-averaged ranks. `None` when only one class is present.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    same_len(scores.len(), positive.len())?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let ranks = average_ranks(scores)?;
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = scores.iter().find(|v| v.is_nan()) {
        return Err(Error::NonFiniteMetric { name: "score", value: *v });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// Area under the step-interpolated precision–recall curve,
/// `sum_k (R_k - R_{k-1}) P_k` over descending score thresholds; tied scores
/// form one threshold. `None` without positives.
pub fn aupr(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    same_len(scores.len(), positive.len())?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Ok(None);
    }
    if let Some(v) = scores.iter().find(|v| v.is_nan()) {
        return Err(Error::NonFiniteMetric { name: "score", value: *v });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area, mut last_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let threshold = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == threshold {
            tp += positive[idx[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        area += (recall - last_recall) * tp as f64 / seen as f64;
        last_recall = recall;
    }
    Ok(Some(area))
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= -SIMPLEX_TOL)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::domain("probability vector", format!("not on the simplex (sum {sum})")));
    }
    Ok(())
}

/// `-sum p log p` in nats, with `0 log 0 = 0`.
pub fn classification_entropy(p: &[f64]) -> Result<f64> {
    check_simplex(p)?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

pub fn max_probability(p: &[f64]) -> Result<f64> {
    check_simplex(p)?;
    Ok(p.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
}

fn prob_rows(probs: &Tensor) -> Result<Vec<&[f64]>> {
    match probs.shape() {
        [_, k] if *k > 0 => Ok(probs.data().chunks(*k).collect()),
        s => Err(Error::shape("metric_suite", format!("expected [n, K] probabilities, got {s:?}"))),
    }
}

fn mean_entropy(rows: &[&[f64]]) -> Result<f64> {
    let total = rows.iter().map(|r| classification_entropy(r)).sum::<Result<f64>>()?;
    Ok(total / rows.len() as f64)
}

/// Index of the first maximal entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-row entropies of a row-stochastic `[n, K]` tensor.
pub fn row_entropies(probs: &Tensor) -> Result<Vec<f64>> {
    prob_rows(probs)?.into_iter().map(classification_entropy).collect()
}
