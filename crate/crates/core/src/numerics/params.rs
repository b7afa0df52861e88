use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub frozen: bool,
}

/// Gradients keyed by parameter path, as produced by one backward pass.
pub type ParamGrads = BTreeMap<String, Tensor>;

/// Named parameters with gradient accumulators and freeze flags.
///
/// Paths are slash-separated (`expert/audio/block0/attn/wq`); ordering is lexical so
/// iteration, checksums and reductions are deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                grad: None,
                frozen: false,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Sets the frozen flag on every parameter whose path starts with `prefix`.
    /// Returns how many parameters matched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        for p in self.params.values_mut() {
            p.frozen = frozen;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds `grads` into the accumulators. Frozen parameters are skipped.
    pub fn accumulate(&mut self, grads: &ParamGrads) -> Result<()> {
        for (name, g) in grads {
            let p = self.get_mut(name)?;
            if p.frozen {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(Error::shape("accumulate", p.value.shape(), g.shape()));
            }
            match &mut p.grad {
                Some(acc) => acc.add_assign(g)?,
                None => p.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    /// Copies values (not flags) for every name present in both stores.
    pub fn load_values_from(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if let Some(src) = other.params.get(name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                    n += 1;
                }
            }
        }
        n
    }

    /// SHA-256 over names, shapes and value bits of parameters under `prefix`.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            if !name.starts_with(prefix) {
                continue;
            }
            h.update(name.as_bytes());
            for &e in p.value.shape() {
                h.update((e as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex_digest(h.finalize().as_slice())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
