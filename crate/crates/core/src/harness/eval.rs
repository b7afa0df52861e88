use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::missing::availability_name;
use crate::harness::sha256_hex;
use crate::model::checkpoint::CheckpointMeta;
use crate::model::{Model, ModelConfig};
use crate::numerics::ParamStore;
use crate::purification::PurificationConfig;
use crate::training::{predict, Banks, FrozenContext, MixVariant, Prediction};
use crate::types::{Modality, ModalityBundle, QuestionType};

/// Identifies what a report was computed from. Reports are comparable only when their data
/// seeds agree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub data_seed: u64,
    /// Hash of the data-generating specification.
    pub data: String,
    /// Hash of the configuration used for training and evaluation.
    pub config: String,
    /// Hash of the evaluated parameters.
    pub checkpoint: String,
    /// Hash over all of the above.
    pub combined: String,
}

impl Fingerprint {
    pub fn new(data_seed: u64, data: String, config: &impl Serialize, checkpoint: String) -> Result<Self> {
        let config = sha256_hex(serde_json::to_string(config)?.as_bytes());
        let combined = sha256_hex(format!("{data_seed}|{data}|{config}|{checkpoint}").as_bytes());
        Ok(Self {
            data_seed,
            data,
            config,
            checkpoint,
            combined,
        })
    }
}

/// Fails with a checkpoint error unless `meta` was trained on data with fingerprint `data`
/// and has the architecture `config`.
pub fn check_checkpoint(meta: &CheckpointMeta, data: &str, config: &ModelConfig) -> Result<()> {
    if meta.data_fingerprint != data {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained on data {} but the dataset is {data}",
            meta.data_fingerprint
        )));
    }
    if &meta.config != config {
        return Err(Error::Checkpoint("checkpoint architecture differs from the configured model".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub count: usize,
    pub correct: usize,
    /// `correct / count`, or 0 for an empty group.
    pub accuracy: f64,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += hit as usize;
    }

    fn finish(&mut self) {
        self.accuracy = if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        };
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub scenario: String,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Keyed by question type: `audio`, `visual`, `either`.
    pub per_type: BTreeMap<String, Tally>,
    /// Keyed by sample availability: `audio_missing`, `visual_missing`, `complete`.
    pub per_scenario: BTreeMap<String, Tally>,
    /// Mean mixture weight per expert.
    pub expert_load: BTreeMap<String, f64>,
    pub fingerprint: Fingerprint,
}

impl EvalReport {
    /// Aggregates predicted labels and mixture weights for `samples`.
    pub fn from_predictions(
        variant: &str,
        scenario: &str,
        samples: &[ModalityBundle],
        predicted: &[(usize, [f64; 3])],
        fingerprint: Fingerprint,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("nothing to evaluate".into()));
        }
        if samples.len() != predicted.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} samples",
                predicted.len(),
                samples.len()
            )));
        }
        let mut total = Tally::default();
        let mut per_type: BTreeMap<String, Tally> = QuestionType::ALL
            .iter()
            .map(|q| (q.name().to_string(), Tally::default()))
            .collect();
        let mut per_scenario: BTreeMap<String, Tally> = ["audio_missing", "visual_missing", "complete"]
            .iter()
            .map(|s| (s.to_string(), Tally::default()))
            .collect();
        let mut load = [0.0; 3];
        for (b, (label, alpha)) in samples.iter().zip(predicted) {
            let hit = *label == b.label;
            total.add(hit);
            per_type.get_mut(b.qtype.name()).expect("all types present").add(hit);
            per_scenario.get_mut(availability_name(b)).expect("all scenarios present").add(hit);
            for (l, a) in load.iter_mut().zip(alpha) {
                *l += a;
            }
        }
        total.finish();
        per_type.values_mut().for_each(Tally::finish);
        per_scenario.values_mut().for_each(Tally::finish);
        let n = samples.len() as f64;
        let expert_load = Modality::ALL
            .iter()
            .zip(load)
            .map(|(m, l)| (m.name().to_string(), l / n))
            .collect();
        Ok(Self {
            variant: variant.to_string(),
            scenario: scenario.to_string(),
            count: total.count,
            correct: total.correct,
            accuracy: total.accuracy,
            per_type,
            per_scenario,
            expert_load,
            fingerprint,
        })
    }

    /// Overall accuracy rebuilt from the per-type breakdown.
    pub fn recombined_accuracy(&self) -> f64 {
        let s: f64 = self.per_type.values().map(|t| t.count as f64 * t.accuracy).sum();
        s / self.count as f64
    }
}

fn predictions(
    model: &Model,
    store: &ParamStore,
    banks: &Banks,
    samples: &[ModalityBundle],
    variant: MixVariant,
    cfg: &PurificationConfig,
) -> Result<Vec<Prediction>> {
    let needs_bank = variant.retrieval && samples.iter().any(|b| b.missing().is_some());
    let ctx = FrozenContext::new(model, store, banks, needs_bank)?;
    samples.iter().map(|b| predict(store, &ctx, b, variant, cfg)).collect()
}

/// Predicts every sample with its own availability and aggregates accuracies.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    banks: &Banks,
    samples: &[ModalityBundle],
    variant: MixVariant,
    cfg: &PurificationConfig,
    scenario: &str,
    fingerprint: Fingerprint,
) -> Result<EvalReport> {
    let preds = predictions(model, store, banks, samples, variant, cfg)?;
    let pairs: Vec<(usize, [f64; 3])> = preds.iter().map(|p| (p.label, p.alpha)).collect();
    EvalReport::from_predictions(variant.name(), scenario, samples, &pairs, fingerprint)
}

/// Mean-pooled joint representation of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub label: usize,
    pub pooled: Vec<f64>,
}

pub fn embeddings(
    model: &Model,
    store: &ParamStore,
    banks: &Banks,
    samples: &[ModalityBundle],
    variant: MixVariant,
    cfg: &PurificationConfig,
) -> Result<Vec<EmbeddingRow>> {
    let preds = predictions(model, store, banks, samples, variant, cfg)?;
    Ok(samples
        .iter()
        .zip(preds)
        .map(|(b, p)| EmbeddingRow {
            id: b.id.clone(),
            label: b.label,
            pooled: p.pooled,
        })
        .collect())
}

/// `id,label,z0,...,z{D-1}`; values use the shortest representation that parses back
/// to the same `f64`.
pub fn embeddings_csv(rows: &[EmbeddingRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.pooled.len());
    let mut out = String::from("id,label");
    for i in 0..dim {
        write!(out, ",z{i}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.id, r.label).unwrap();
        for v in &r.pooled {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes the pooled embeddings of `samples` as CSV and returns the row count.
#[allow(clippy::too_many_arguments)]
pub fn dump_embeddings(
    model: &Model,
    store: &ParamStore,
    banks: &Banks,
    samples: &[ModalityBundle],
    variant: MixVariant,
    cfg: &PurificationConfig,
    path: &Path,
) -> Result<usize> {
    let rows = embeddings(model, store, banks, samples, variant, cfg)?;
    crate::binio::write_file(path, embeddings_csv(&rows).as_bytes())?;
    Ok(rows.len())
}
