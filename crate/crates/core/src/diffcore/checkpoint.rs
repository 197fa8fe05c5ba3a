//! Network checkpoint files.
//!
//! A net is stored as two files sharing a stem: `<stem>.bin`, the raw
//! little-endian `f64` parameters in layer order (`W1, b1, W2, b2, ...`, each
//! row-major `[in, out]`), and `<stem>.json`, a manifest describing how to
//! reinterpret them. Round trips are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpNet};
use super::optim::MomentOptimizer;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    Actor,
    Critic1,
    Critic2,
    TargetActor,
    TargetCritic1,
    TargetCritic2,
    RobustQ,
}

impl NetRole {
    pub fn file_stem(self) -> &'static str {
        match self {
            NetRole::Actor => "actor",
            NetRole::Critic1 => "critic1",
            NetRole::Critic2 => "critic2",
            NetRole::TargetActor => "target_actor",
            NetRole::TargetCritic1 => "target_critic1",
            NetRole::TargetCritic2 => "target_critic2",
            NetRole::RobustQ => "robust_q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetManifest {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub float_count: usize,
    pub role: NetRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerManifest {
    pub role: String,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Floats in the `.bin`: first moments then second moments.
    pub float_count: usize,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn encode_floats<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_floats(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "float stream of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_required(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "checkpoint file not found".into(),
        },
        _ => Error::Io(e),
    })
}

pub fn save_net(stem: &Path, net: &MlpNet, role: NetRole) -> Result<()> {
    let manifest = NetManifest {
        layer_dims: net.layer_dims().to_vec(),
        activations: net.activations(),
        float_count: net.float_count(),
        role,
    };
    fs::write(with_ext(stem, "bin"), encode_floats(net.params()))?;
    fs::write(
        with_ext(stem, "json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_net(stem: &Path) -> Result<(MlpNet, NetManifest)> {
    let manifest: NetManifest = serde_json::from_slice(&read_required(&with_ext(stem, "json"))?)?;
    let floats = decode_floats(&read_required(&with_ext(stem, "bin"))?)?;
    if floats.len() != manifest.float_count {
        return Err(Error::Format(format!(
            "{}: manifest says {} floats, file has {}",
            stem.display(),
            manifest.float_count,
            floats.len()
        )));
    }
    let layers = manifest.layer_dims.len().saturating_sub(1);
    if manifest.activations.len() != layers
        || manifest.activations[..layers.saturating_sub(1)]
            .iter()
            .any(|&a| a != Activation::Relu)
    {
        return Err(Error::Format(format!(
            "{}: unsupported activation layout {:?}",
            stem.display(),
            manifest.activations
        )));
    }
    let output = *manifest.activations.last().unwrap_or(&Activation::None);
    let mut net = MlpNet::zeros(&manifest.layer_dims, output)?;
    if net.float_count() != floats.len() {
        return Err(Error::Format("float count does not match layer dims".into()));
    }
    let mut offset = 0;
    for p in net.params_mut() {
        let n = p.len();
        p.data_mut().copy_from_slice(&floats[offset..offset + n]);
        offset += n;
    }
    Ok((net, manifest))
}

pub fn save_optimizer(stem: &Path, opt: &MomentOptimizer, role: &str) -> Result<()> {
    let (first, second) = opt.moments();
    let bytes = encode_floats(first.iter().chain(second));
    let manifest = OptimizerManifest {
        role: role.to_string(),
        step: opt.step_count(),
        lr: opt.lr,
        beta1: opt.beta1,
        beta2: opt.beta2,
        eps: opt.eps,
        float_count: bytes.len() / 8,
    };
    fs::write(with_ext(stem, "bin"), bytes)?;
    fs::write(
        with_ext(stem, "json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Restore an optimizer for `net` from `<stem>.{json,bin}`.
pub fn load_optimizer(stem: &Path, net: &MlpNet) -> Result<MomentOptimizer> {
    let manifest: OptimizerManifest =
        serde_json::from_slice(&read_required(&with_ext(stem, "json"))?)?;
    let floats = decode_floats(&read_required(&with_ext(stem, "bin"))?)?;
    let per = net.float_count();
    if floats.len() != manifest.float_count || floats.len() != 2 * per {
        return Err(Error::Format(format!(
            "{}: optimizer state has {} floats, expected {}",
            stem.display(),
            floats.len(),
            2 * per
        )));
    }
    let split = |data: &[f64]| -> Result<Vec<Tensor>> {
        let mut off = 0;
        net.params()
            .map(|p| {
                let t = Tensor::new(p.shape().to_vec(), data[off..off + p.len()].to_vec());
                off += p.len();
                t
            })
            .collect()
    };
    let mut opt = MomentOptimizer::new(net, manifest.lr);
    opt.beta1 = manifest.beta1;
    opt.beta2 = manifest.beta2;
    opt.eps = manifest.eps;
    opt.restore(manifest.step, split(&floats[..per])?, split(&floats[per..])?)?;
    Ok(opt)
}
