use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes_layers::BayesNet;
use crate::error::{Error, Result};
use crate::inference::PosteriorSamples;

/// Bandwidth used when every draw coincides.
pub const MIN_BANDWIDTH: f64 = 1e-12;

/// Evaluation grid `[-half_width, half_width]` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityGrid {
    pub half_width: f64,
    pub points: usize,
}

impl Default for DensityGrid {
    fn default() -> Self {
        DensityGrid { half_width: 1.0, points: 201 }
    }
}

impl DensityGrid {
    pub fn nodes(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n).map(|i| -self.half_width + 2.0 * self.half_width * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

/// Posterior draws of one first-layer weight and their kernel density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDump {
    /// Row-major index into the first layer's weight tensor.
    pub weight_id: usize,
    /// Posterior mean used for the ranking.
    pub mean: f64,
    pub samples: Vec<f64>,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityDump {
    pub fn density_at(&self, x: f64) -> f64 {
        kde(&self.samples, self.bandwidth, x)
    }
}

/// Gaussian kernel density estimate at `x`.
pub fn kde(samples: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    norm * samples.iter().map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp()).sum::<f64>()
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to the
/// sd alone when the IQR vanishes and to [`MIN_BANDWIDTH`] when both do.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return MIN_BANDWIDTH;
    }
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1.0);
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = (q(0.75) - q(0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    (0.9 * spread * n.powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Densities of the `k` first-layer weights with the smallest `|E[w]|`,
/// with `E[w]` the variational mean, ties broken by index. `draws` are full
/// parameter vectors in the network's flat layout.
pub fn shrinkage_density_dump(
    net: &BayesNet,
    draws: &PosteriorSamples,
    k: usize,
    grid: &DensityGrid,
) -> Result<Vec<DensityDump>> {
    let first = net.layers.first().ok_or(Error::Empty("shrinkage_density_dump"))?;
    let mu = first.weights.mu.data();
    if k > mu.len() {
        return Err(Error::Config(format!("k = {k} exceeds the {} first-layer weights", mu.len())));
    }
    if draws.dim() != net.num_params() {
        return Err(Error::Length { expected: net.num_params(), got: draws.dim() });
    }
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu[a].abs().total_cmp(&mu[b].abs()).then(a.cmp(&b)));
    let nodes = grid.nodes();
    Ok(order[..k]
        .iter()
        .map(|&j| {
            let samples: Vec<f64> = draws.samples.iter().map(|s| s[j]).collect();
            let bandwidth = silverman_bandwidth(&samples);
            let density = nodes.iter().map(|&x| kde(&samples, bandwidth, x)).collect();
            DensityDump { weight_id: j, mean: mu[j], samples, bandwidth, grid: nodes.clone(), density }
        })
        .collect())
}

/// Long-format CSV with columns `weight_id,kind,x,value`: `kind = sample`
/// rows carry the draw index in `x`, `kind = kde` rows a grid node.
pub fn write_density_csv(path: &Path, dumps: &[DensityDump]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["weight_id", "kind", "x", "value"])?;
    for d in dumps {
        let id = d.weight_id.to_string();
        for (i, s) in d.samples.iter().enumerate() {
            w.write_record([id.as_str(), "sample", &i.to_string(), &s.to_string()])?;
        }
        for (x, v) in d.grid.iter().zip(&d.density) {
            w.write_record([id.as_str(), "kde", &x.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
