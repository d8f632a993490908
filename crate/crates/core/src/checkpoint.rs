//! Checkpoints: a JSON manifest plus a flat blob of little-endian f64 values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::ArchDag;
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::graph::seeded_rng;
use crate::network::{DataShape, NetConfig, Network};
use crate::params::Group;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values (not bytes).
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    /// Always "f64-le".
    pub format: String,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub shape: DataShape,
    pub net: NetConfig,
    /// Parameters in blob order.
    pub params: Vec<ParamEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` (values in manifest order).
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let mut bytes = Vec::new();
    let mut params = Vec::new();
    let mut offset = 0;
    for p in net.params.iter() {
        params.push(ParamEntry { name: p.name.clone(), group: p.group, shape: p.value.shape().to_vec(), offset });
        offset += p.value.numel();
        for x in p.value.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        format: "f64-le".into(),
        blob: blob.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        shape: net.shape(),
        net: net.config().clone(),
        params,
    };
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}

/// Rebuilds the network for `arch` and fills every parameter from the
/// checkpoint; names and shapes must match exactly.
pub fn load_checkpoint(path: &Path, arch: ArchDag) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.version != CHECKPOINT_VERSION || m.format != "f64-le" {
        return Err(Error::Schema(format!("unsupported checkpoint version {} format {}", m.version, m.format)));
    }
    let blob = path.parent().unwrap_or(Path::new(".")).join(&m.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Schema("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut net = Network::new(arch, m.shape, m.net.clone(), &mut seeded_rng(0))?;
    if net.params.len() != m.params.len() {
        return Err(Error::Schema(format!(
            "checkpoint has {} parameters, the architecture needs {}",
            m.params.len(),
            net.params.len()
        )));
    }
    for e in &m.params {
        let id = net
            .params
            .id(&e.name)
            .ok_or_else(|| Error::Schema(format!("checkpoint parameter {} does not fit the architecture", e.name)))?;
        let p = net.params.get_mut(id);
        if p.value.shape() != e.shape.as_slice() || p.group != e.group {
            return Err(Error::Schema(format!(
                "parameter {} has shape {:?}, expected {:?}",
                e.name,
                e.shape,
                p.value.shape()
            )));
        }
        let n = p.value.numel();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Schema(format!("blob too short for {}", e.name)))?;
        p.value = Tensor::new(e.shape.clone(), slice.to_vec())?;
    }
    Ok(net)
}
