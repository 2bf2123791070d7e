//! Checkpoint container.
//!
//! ```text
//! "D3DC" | u32 version = 1 | u32 manifest_len | manifest (TOML, UTF-8)
//! | u32 tensor_count | tensor_count x (u32 name_len | name | raw tensor record)
//! ```
//!
//! Integers are little-endian; each tensor record is a complete `D3DT` file
//! (see [`crate::tensor`]). Optimizer moments are stored as `<param>.m` and
//! `<param>.v`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Model, NetworkConfig};
use crate::autograd::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D3DC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S = f32> {
    pub model: Model<S>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam: Option<AdamState<S>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    epoch: usize,
    network: NetworkConfig,
    adam: Option<AdamManifest>,
    params: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamManifest {
    config: AdamConfig,
    step: u64,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_named<S: Scalar>(w: &mut impl Write, name: &str, t: &Tensor<S>) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_tensor(w, t)
}

pub fn write_checkpoint<S: Scalar>(w: &mut impl Write, ckpt: &Checkpoint<S>) -> Result<()> {
    let manifest = Manifest {
        epoch: ckpt.epoch,
        network: ckpt.model.config,
        adam: ckpt.adam.as_ref().map(|a| AdamManifest {
            config: a.config,
            step: a.step,
        }),
        params: ckpt.model.params.keys().cloned().collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;

    let mut tensors: Vec<(String, &Tensor<S>)> =
        ckpt.model.params.iter().map(|(k, v)| (k.clone(), v)).collect();
    if let Some(adam) = &ckpt.adam {
        for (k, v) in &adam.m {
            tensors.push((format!("{k}.m"), v));
        }
        for (k, v) in &adam.v {
            tensors.push((format!("{k}.v"), v));
        }
    }

    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, text.len() as u32)?;
    w.write_all(text.as_bytes())?;
    write_u32(w, tensors.len() as u32)?;
    for (name, t) in tensors {
        write_named(w, &name, t)?;
    }
    Ok(())
}

pub fn read_checkpoint<S: Scalar>(r: &mut impl Read) -> Result<Checkpoint<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint truncated".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("not a checkpoint (magic {magic:?})")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|e| Error::Format(e.to_string()))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;

    let count = read_u32(r)? as usize;
    let mut tensors: IndexMap<String, Tensor<S>> = IndexMap::with_capacity(count);
    for _ in 0..count {
        let n = read_u32(r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        tensors.insert(name, read_tensor(r)?.into_tensor());
    }

    let mut params = IndexMap::new();
    for name in &manifest.params {
        let t = tensors
            .shift_remove(name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        params.insert(name.clone(), t);
    }
    let model = Model::from_params(manifest.network, params)?;

    let adam = manifest.adam.map(|a| {
        let mut st = AdamState::new(a.config);
        st.step = a.step;
        for name in model.params.keys() {
            if let Some(m) = tensors.shift_remove(&format!("{name}.m")) {
                st.m.insert(name.clone(), m);
            }
            if let Some(v) = tensors.shift_remove(&format!("{name}.v")) {
                st.v.insert(name.clone(), v);
            }
        }
        st
    });

    Ok(Checkpoint {
        model,
        epoch: manifest.epoch,
        adam,
    })
}

pub fn save_checkpoint<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
