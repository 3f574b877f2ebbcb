//! JSON checkpoints of trained policy networks.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{NetSpec, QNetwork};
use crate::topology::Topology;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    topology_hash: String,
    cfg_hash: String,
    cfg: TrainConfig,
    spec: NetSpec,
    tensors: Vec<NamedTensor>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: QNetwork<f32>,
    pub cfg: TrainConfig,
    pub topology_hash: String,
}

fn cfg_hash(cfg: &TrainConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(cfg)?)))
}

pub fn save_checkpoint(
    policy: &QNetwork<f32>,
    cfg: &TrainConfig,
    topo: &Topology,
    path: impl AsRef<Path>,
) -> Result<()> {
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        topology_hash: topo.hash(),
        cfg_hash: cfg_hash(cfg)?,
        cfg: cfg.clone(),
        spec: policy.spec.clone(),
        tensors: policy
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor {
                name: name.to_string(),
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

/// Reads a checkpoint and checks it against the runtime topology: the action
/// count must match, then the topology hash.
pub fn load_checkpoint(path: impl AsRef<Path>, topo: &Topology) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: corrupt checkpoint: {e}", path.display())))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} is not supported (expected {FORMAT_VERSION})",
            path.display(),
            file.format_version
        )));
    }
    if file.spec.actions != topo.edge_count() || file.spec.nodes != topo.node_count() {
        return Err(Error::Shape {
            what: "checkpoint network".into(),
            expected: format!("n={}, m={}", topo.node_count(), topo.edge_count()),
            actual: format!("n={}, m={}", file.spec.nodes, file.spec.actions),
        });
    }
    if file.topology_hash != topo.hash() {
        return Err(Error::Checkpoint(format!(
            "{}: trained on topology {} but the runtime topology is {}",
            path.display(),
            &file.topology_hash,
            topo.hash()
        )));
    }
    if cfg_hash(&file.cfg)? != file.cfg_hash {
        return Err(Error::Checkpoint(format!("{}: config hash does not match its config", path.display())));
    }
    let mut policy = QNetwork::<f32>::zeros(file.spec.clone());
    let expected: Vec<(&'static str, Vec<usize>)> =
        policy.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if expected.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    for ((name, shape), (slot, stored)) in expected
        .into_iter()
        .zip(policy.tensors_mut().into_iter().zip(&file.tensors))
    {
        if stored.name != name || stored.shape != shape || stored.data.len() != slot.len() {
            return Err(Error::Shape {
                what: format!("tensor {}", stored.name),
                expected: format!("{name} {shape:?}"),
                actual: format!("{} {:?} with {} values", stored.name, stored.shape, stored.data.len()),
            });
        }
        slot.copy_from_slice(&stored.data);
    }
    Ok(Checkpoint {
        policy,
        cfg: file.cfg,
        topology_hash: file.topology_hash,
    })
}
