use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::numerics::{Tensor, COSINE_EPS};
use crate::types::Modality;

/// Input record for [`build_bank`]: an id, an unnormalised key and a value sequence.
#[derive(Clone, Debug)]
pub struct BankRecord {
    pub id: String,
    pub key: Vec<f64>,
    pub value: Tensor,
}

/// One stored sample. Keys and values are kept at single precision so that a saved bank
/// reloads bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub id: String,
    pub key: Vec<f32>,
    pub value: Vec<f32>,
}

impl BankEntry {
    pub fn key_f64(&self) -> Vec<f64> {
        self.key.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankMeta {
    pub source: String,
    pub count: u64,
    pub checksum: u32,
}

/// Exhaustively scanned store of `(key, value)` pairs for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    pub(crate) modality: Modality,
    pub(crate) key_dim: usize,
    pub(crate) value_len: usize,
    pub(crate) value_dim: usize,
    pub(crate) entries: Vec<BankEntry>,
    pub(crate) meta: BankMeta,
}

/// A retrieval request.
#[derive(Clone, Debug)]
pub struct QuerySpec {
    pub query: Vec<f64>,
    pub n: usize,
    pub exclude: BTreeSet<String>,
    pub eps: f64,
}

impl QuerySpec {
    pub fn new(query: Vec<f64>, n: usize) -> Self {
        Self {
            query,
            n,
            exclude: BTreeSet::new(),
            eps: COSINE_EPS,
        }
    }

    pub fn excluding(mut self, id: impl Into<String>) -> Self {
        self.exclude.insert(id.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Position of the entry in the bank.
    pub index: usize,
    pub id: String,
    pub score: f64,
}

pub fn build_bank(
    records: Vec<BankRecord>,
    modality: Modality,
    source: impl Into<String>,
) -> Result<MemoryBank> {
    if modality == Modality::Text {
        return Err(Error::Modality("memory banks hold audio or visual features".into()));
    }
    let first = records
        .first()
        .ok_or(Error::EmptySequence("build_bank"))?;
    if first.value.rank() != 2 || first.value.rows() == 0 {
        return Err(Error::InconsistentDims {
            id: first.id.clone(),
            expected: vec![0, 0],
            got: first.value.shape().to_vec(),
        });
    }
    let key_dim = first.key.len();
    let (value_len, value_dim) = (first.value.rows(), first.value.cols());
    let expected = vec![key_dim, value_len, value_dim];

    let mut seen = HashSet::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        let got_value = rec.value.shape();
        if rec.key.len() != key_dim || got_value != [value_len, value_dim] {
            let mut got = vec![rec.key.len()];
            got.extend_from_slice(got_value);
            return Err(Error::InconsistentDims {
                id: rec.id,
                expected,
                got,
            });
        }
        let norm = rec.key.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNormKey(rec.id));
        }
        entries.push(BankEntry {
            key: rec.key.iter().map(|v| (v / norm) as f32).collect(),
            value: rec.value.data().iter().map(|&v| v as f32).collect(),
            id: rec.id,
        });
    }

    let mut bank = MemoryBank {
        modality,
        key_dim,
        value_len,
        value_dim,
        meta: BankMeta {
            source: source.into(),
            count: entries.len() as u64,
            checksum: 0,
        },
        entries,
    };
    bank.meta.checksum = bank.compute_checksum();
    Ok(bank)
}

impl MemoryBank {
    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn value_shape(&self) -> [usize; 2] {
        [self.value_len, self.value_dim]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn meta(&self) -> &BankMeta {
        &self.meta
    }

    pub fn entry(&self, index: usize) -> &BankEntry {
        &self.entries[index]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    /// Value sequence of entry `index` as a double-precision `L x D` tensor.
    pub fn value(&self, index: usize) -> Tensor {
        let e = &self.entries[index];
        Tensor::new(
            &[self.value_len, self.value_dim],
            e.value.iter().map(|&v| v as f64).collect(),
        )
        .expect("dims validated at build")
    }

    /// CRC32 of the serialised body; equals the trailer of the saved file.
    pub fn compute_checksum(&self) -> u32 {
        crate::binio::crc32(&super::format::encode_body(self))
    }

    /// Cosine similarity of `query` against every entry, in bank order.
    pub fn scores(&self, query: &[f64], eps: f64) -> Result<Vec<f64>> {
        if query.len() != self.key_dim {
            return Err(Error::shape("bank query", &[query.len()], &[self.key_dim]));
        }
        let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(self
            .entries
            .iter()
            .map(|e| {
                let mut dot = 0.0;
                let mut kn = 0.0;
                for (&k, q) in e.key.iter().zip(query) {
                    let k = k as f64;
                    dot += k * q;
                    kn += k * k;
                }
                dot / (qn * kn.sqrt() + eps)
            })
            .collect())
    }

    fn ranked(&self, spec: &QuerySpec, descending: bool) -> Result<Vec<Candidate>> {
        if spec.n == 0 {
            return Err(Error::Contract("query n must be at least 1".into()));
        }
        let scores = self.scores(&spec.query, spec.eps)?;
        let mut pool: Vec<usize> = (0..self.entries.len())
            .filter(|&i| !spec.exclude.contains(&self.entries[i].id))
            .collect();
        if spec.n > pool.len() {
            return Err(Error::NotEnoughEntries {
                requested: spec.n,
                available: pool.len(),
            });
        }
        let cmp = |&a: &usize, &b: &usize| -> Ordering {
            let ord = if descending {
                scores[b].total_cmp(&scores[a])
            } else {
                scores[a].total_cmp(&scores[b])
            };
            ord.then(a.cmp(&b))
        };
        if spec.n < pool.len() {
            pool.select_nth_unstable_by(spec.n - 1, cmp);
            pool.truncate(spec.n);
        }
        pool.sort_by(cmp);
        Ok(pool
            .into_iter()
            .map(|i| Candidate {
                index: i,
                id: self.entries[i].id.clone(),
                score: scores[i],
            })
            .collect())
    }

    /// The `n` most similar entries, descending by score; ties keep bank order.
    pub fn query_topn(&self, spec: &QuerySpec) -> Result<Vec<Candidate>> {
        self.ranked(spec, true)
    }

    /// The `n` least similar entries, ascending by score; ties keep bank order.
    pub fn query_bottomn(&self, spec: &QuerySpec) -> Result<Vec<Candidate>> {
        self.ranked(spec, false)
    }
}
