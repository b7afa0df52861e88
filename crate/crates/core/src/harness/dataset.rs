//! Dataset directories: `features.bin`, a tensor container holding `{id}/audio`,
//! `{id}/visual`, `{id}/text` and `{id}/key` for every sample, and `index.json` with the
//! generating spec, vocabulary and per-sample metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::harness::sha256_hex;
use crate::harness::synthetic::{Factors, Sample, SyntheticData, SyntheticSpec};
use crate::model::checkpoint::{decode_tensors, encode_tensors, FEATURES_MAGIC};
use crate::numerics::Tensor;
use crate::types::{ModalityBundle, QuestionType};

pub const INDEX_FORMAT: &str = "modality-recall-dataset";
pub const INDEX_VERSION: u32 = 1;

/// Hash of the generating spec. Stable under missingness simulation.
pub fn spec_fingerprint(spec: &SyntheticSpec) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(spec)?.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub label: usize,
    pub qtype: QuestionType,
    pub factors: Factors,
    pub audio: bool,
    pub visual: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub spec: SyntheticSpec,
    pub vocab: Vec<String>,
    pub splits: BTreeMap<String, Vec<IndexEntry>>,
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn save_dataset(data: &SyntheticData, dir: &Path) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut splits = BTreeMap::new();
    for name in SPLITS {
        let mut entries = Vec::new();
        for s in data.split(name)? {
            let b = &s.bundle;
            if tensors.contains_key(&format!("{}/text", b.id)) {
                return Err(Error::Data(format!("duplicate sample id {:?}", b.id)));
            }
            if let Some(a) = &b.audio {
                tensors.insert(format!("{}/audio", b.id), a.clone());
            }
            if let Some(v) = &b.visual {
                tensors.insert(format!("{}/visual", b.id), v.clone());
            }
            tensors.insert(format!("{}/text", b.id), b.text.clone());
            tensors.insert(format!("{}/key", b.id), Tensor::vector(b.key.clone()));
            entries.push(IndexEntry {
                id: b.id.clone(),
                label: b.label,
                qtype: b.qtype,
                factors: s.factors,
                audio: b.audio.is_some(),
                visual: b.visual.is_some(),
            });
        }
        splits.insert(name.to_string(), entries);
    }
    let index = DatasetIndex {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        fingerprint: spec_fingerprint(&data.spec)?,
        spec: data.spec.clone(),
        vocab: data.vocab.clone(),
        splits,
    };
    binio::write_file(&dir.join("features.bin"), &encode_tensors(FEATURES_MAGIC, &tensors)?)?;
    binio::write_file(&dir.join("index.json"), serde_json::to_string_pretty(&index)?.as_bytes())
}

pub fn load_index(dir: &Path) -> Result<DatasetIndex> {
    let raw = binio::read_file(&dir.join("index.json"))?;
    let index: DatasetIndex = serde_json::from_slice(&raw).map_err(|e| Error::Data(format!("index.json: {e}")))?;
    if index.format != INDEX_FORMAT || index.version != INDEX_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset index {} v{}",
            index.format, index.version
        )));
    }
    Ok(index)
}

pub fn load_dataset(dir: &Path) -> Result<SyntheticData> {
    let index = load_index(dir)?;
    let mut tensors = decode_tensors(FEATURES_MAGIC, &binio::read_file(&dir.join("features.bin"))?)?;
    let mut take = |id: &str, part: &str| -> Result<Tensor> {
        tensors
            .remove(&format!("{id}/{part}"))
            .ok_or_else(|| Error::Data(format!("features.bin lacks {id}/{part}")))
    };
    let mut out: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for name in SPLITS {
        let entries = index
            .splits
            .get(name)
            .ok_or_else(|| Error::Data(format!("index.json lacks split {name:?}")))?;
        let mut samples = Vec::with_capacity(entries.len());
        for e in entries {
            let audio = if e.audio { Some(take(&e.id, "audio")?) } else { None };
            let visual = if e.visual { Some(take(&e.id, "visual")?) } else { None };
            let text = take(&e.id, "text")?;
            let key = take(&e.id, "key")?.into_data();
            if e.label >= index.vocab.len() {
                return Err(Error::LabelRange {
                    label: e.label,
                    vocab: index.vocab.len(),
                });
            }
            samples.push(Sample {
                bundle: ModalityBundle {
                    id: e.id.clone(),
                    audio,
                    visual,
                    text,
                    label: e.label,
                    qtype: e.qtype,
                    key,
                },
                factors: e.factors,
            });
        }
        out.insert(name.to_string(), samples);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Data(format!("features.bin has unindexed tensor {extra:?}")));
    }
    Ok(SyntheticData {
        spec: index.spec,
        vocab: index.vocab,
        train: out.remove("train").unwrap_or_default(),
        val: out.remove("val").unwrap_or_default(),
        test: out.remove("test").unwrap_or_default(),
    })
}
