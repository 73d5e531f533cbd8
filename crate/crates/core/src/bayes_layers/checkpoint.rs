//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `R2D2CKPT` |
//! | 4     | format version (`u32`) |
//! | 8     | header length `h` (`u64`) |
//! | h     | UTF-8 JSON header |
//! | 8·n   | tensor data as `f64`, in header table order |
//!
//! The header records the layer specs, prior configuration, seed, the
//! scalar shrinkage latents of each layer and a `(name, shape)` table of
//! every stored tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BayesLayer, BayesNet, HorseshoeScales, LayerSpec, PriorConfig, ShrinkageState, VariationalWeights};
use crate::autodiff_nn::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"R2D2CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    specs: Vec<LayerSpec>,
    prior: PriorConfig,
    layers: Vec<LayerHeader>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    shrinkage: Option<ShrinkageScalars>,
    horseshoe: bool,
}

#[derive(Serialize, Deserialize)]
struct ShrinkageScalars {
    omega: f64,
    xi: f64,
    a_l: f64,
    b_l: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn layer_tensors(i: usize, layer: &BayesLayer) -> Vec<(String, Tensor)> {
    let w = &layer.weights;
    let mut out = vec![
        (format!("layer{i}.mu"), w.mu.clone()),
        (format!("layer{i}.rho"), w.rho.clone()),
        (format!("layer{i}.mu_bias"), w.mu_bias.clone()),
        (format!("layer{i}.rho_bias"), w.rho_bias.clone()),
    ];
    if let Some(ss) = &layer.shrinkage {
        out.push((format!("layer{i}.psi"), ss.psi.clone()));
        out.push((format!("layer{i}.phi"), ss.phi.clone()));
    }
    if let Some(h) = &layer.horseshoe {
        out.push((format!("layer{i}.horseshoe_var"), Tensor::vector(h.prior_var.clone())));
    }
    out
}

pub fn save_checkpoint(net: &BayesNet, seed: u64, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut layers = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        tensors.extend(layer_tensors(i, layer));
        layers.push(LayerHeader {
            shrinkage: layer.shrinkage.as_ref().map(|s| ShrinkageScalars { omega: s.omega, xi: s.xi, a_l: s.a_l, b_l: s.b_l }),
            horseshoe: layer.horseshoe.is_some(),
        });
    }
    let header = Header {
        seed,
        specs: net.specs().to_vec(),
        prior: net.prior.clone(),
        layers,
        tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(20 + json.len() + 8 * net.num_params() * 3);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a checkpoint back into a network and the seed it was saved with.
pub fn load_checkpoint(path: &Path) -> Result<(BayesNet, u64)> {
    let bytes = fs::read(path)?;
    let err = |offset: usize, detail: String| Error::Parse { path: path.to_path_buf(), offset: offset as u64, detail };
    let take = |off: usize, n: usize| -> Result<&[u8]> {
        bytes.get(off..off + n).ok_or_else(|| err(bytes.len(), format!("truncated: need {n} bytes at {off}")))
    };
    if take(0, 8)? != CHECKPOINT_MAGIC {
        return Err(err(0, "bad magic".into()));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(err(8, format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(take(12, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(20, hlen)?).map_err(|e| err(20, format!("header: {e}")))?;
    let mut off = 20 + hlen;
    let mut table = std::collections::HashMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = take(off, 8 * n)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        table.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data).map_err(|e| err(off, e.to_string()))?);
        off += 8 * n;
    }
    if off != bytes.len() {
        return Err(err(off, format!("{} trailing bytes", bytes.len() - off)));
    }
    let mut get = |name: String| table.remove(&name).ok_or_else(|| err(20, format!("missing tensor {name}")));
    let mut layers = Vec::new();
    for (i, lh) in header.layers.iter().enumerate() {
        let weights = VariationalWeights {
            mu: get(format!("layer{i}.mu"))?,
            rho: get(format!("layer{i}.rho"))?,
            mu_bias: get(format!("layer{i}.mu_bias"))?,
            rho_bias: get(format!("layer{i}.rho_bias"))?,
        };
        let shrinkage = match &lh.shrinkage {
            Some(s) => Some(ShrinkageState {
                psi: get(format!("layer{i}.psi"))?,
                phi: get(format!("layer{i}.phi"))?,
                omega: s.omega,
                xi: s.xi,
                a_l: s.a_l,
                b_l: s.b_l,
            }),
            None => None,
        };
        let horseshoe = if lh.horseshoe {
            Some(HorseshoeScales { prior_var: get(format!("layer{i}.horseshoe_var"))?.into_data() })
        } else {
            None
        };
        layers.push(BayesLayer { weights, shrinkage, horseshoe });
    }
    let net = BayesNet::from_parts(header.specs, layers, header.prior).map_err(|e| err(20, e.to_string()))?;
    Ok((net, header.seed))
}
