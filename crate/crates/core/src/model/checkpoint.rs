//! Named-tensor container used for model checkpoints and feature archives.
//!
//! ```text
//! magic [4] | version u16 | count u32
//! per tensor: name_len u16 | name (UTF-8) | rank u8 | extents (rank x u32) | payload (f64 x prod(extents))
//! CRC32 (u32) over every preceding byte
//! ```
//!
//! Little-endian throughout. Tensors are written in lexical name order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, put_u32, Reader};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"R2CK";
pub const FEATURES_MAGIC: [u8; 4] = *b"R2FT";
pub const CONTAINER_VERSION: u16 = 1;

pub fn encode_tensors(magic: [u8; 4], tensors: &BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    put_u32(&mut buf, tensors.len() as u32);
    for (name, t) in tensors {
        binio::put_name(&mut buf, name)?;
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            put_u32(&mut buf, e as u32);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(binio::seal(buf))
}

pub fn decode_tensors(magic: [u8; 4], buf: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader::new(buf, "tensor container");
    let found = r.array::<4>()?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let version = r.u16()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Version {
            expected: CONTAINER_VERSION,
            found: version,
        });
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = r.string(len)?;
        let rank = r.u8()? as usize;
        if rank == 0 || rank > 3 {
            return Err(Error::Format(format!("tensor {name:?} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| Error::Format(format!("tensor {name:?} too large")))?;
        let data = r.f64s(n)?;
        let t = Tensor::new(&shape, data)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor name {name:?}")));
        }
    }
    binio::verify_trailer(&mut r, buf)?;
    Ok(out)
}

pub fn store_tensors(store: &ParamStore) -> BTreeMap<String, Tensor> {
    store
        .iter()
        .map(|(n, p)| (n.clone(), p.value.clone()))
        .collect()
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = encode_tensors(CHECKPOINT_MAGIC, &store_tensors(store))?;
    binio::write_file(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = binio::read_file(path)?;
    let tensors = decode_tensors(CHECKPOINT_MAGIC, &bytes)?;
    let mut store = ParamStore::new();
    for (n, t) in tensors {
        store.insert(n, t);
    }
    Ok(store)
}

/// JSON companion of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// SHA-256 of every parameter (see [`ParamStore::checksum`]).
    pub params_sha256: String,
    pub stage: String,
    /// Recovery variant a stage-II checkpoint was trained with.
    #[serde(default)]
    pub variant: Option<String>,
    pub seed: u64,
    /// Fingerprint of the data the checkpoint was trained on.
    pub data_fingerprint: String,
}

pub fn save_model(dir: &Path, meta: &CheckpointMeta, store: &ParamStore) -> Result<()> {
    save_checkpoint(store, &dir.join("model.ckpt"))?;
    let json = serde_json::to_string_pretty(meta)?;
    binio::write_file(&dir.join("model.json"), json.as_bytes())
}

/// Loads `model.ckpt` + `model.json` and checks that the parameters match the recorded hash.
pub fn load_model(dir: &Path) -> Result<(CheckpointMeta, ParamStore)> {
    let raw = binio::read_file(&dir.join("model.json"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&raw)?;
    let store = load_checkpoint(&dir.join("model.ckpt"))?;
    let got = store.checksum("");
    if got != meta.params_sha256 {
        return Err(Error::Checkpoint(format!(
            "parameter hash {got} does not match recorded {}",
            meta.params_sha256
        )));
    }
    Ok((meta, store))
}
