//! Synthetic audio-visual question answering benchmark.
//!
//! Every sample has three latent factors: a shared event `s`, an attribute `a` that only the
//! audio stream carries and an attribute `v` that only the visual stream carries. Audio
//! tokens are `P_s + Q_a` plus noise, visual tokens are `R_s + U_v` plus noise, and a
//! fraction of tokens is replaced by content from another random event. Audio questions ask
//! for `a`, visual questions for `v` and "either" questions for `s`. Each sample also has a
//! key in a shared embedding space, a noisy sum of embeddings of all three factors, used to
//! retrieve content for an absent stream.
//!
//! Each stream also carries a weak trace of the other stream's attribute (`cross_talk`), so an
//! absent attribute is partly inferable from the stream that remains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RawDims;
use crate::numerics::Tensor;
use crate::store::BankRecord;
use crate::types::{Modality, ModalityBundle, QuestionType};

/// Share of each question type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionMix {
    pub audio: f64,
    pub visual: f64,
    pub either: f64,
}

impl QuestionMix {
    pub fn get(&self, q: QuestionType) -> f64 {
        match q {
            QuestionType::Audio => self.audio,
            QuestionType::Visual => self.visual,
            QuestionType::Either => self.either,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Number of values of each latent factor.
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seq_len: usize,
    pub raw_dims: RawDims,
    pub key_dim: usize,
    /// Standard deviation of per-element feature noise.
    pub noise: f64,
    /// Standard deviation of key noise, relative to a unit-norm factor embedding.
    pub key_noise: f64,
    /// Probability that a token carries another event's content.
    pub distractor_rate: f64,
    /// Probability that each attribute copies the event index instead of being drawn
    /// independently.
    pub coupling: f64,
    /// Scale of a trace of each stream's attribute carried by the other stream.
    pub cross_talk: f64,
    pub questions: QuestionMix,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            train: 400,
            val: 100,
            test: 200,
            seq_len: 12,
            raw_dims: RawDims {
                audio: 16,
                visual: 16,
                text: 8,
            },
            key_dim: 16,
            noise: 0.5,
            key_noise: 1.5,
            distractor_rate: 0.25,
            coupling: 0.0,
            cross_talk: 0.3,
            questions: QuestionMix {
                audio: 0.4,
                visual: 0.4,
                either: 0.2,
            },
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let q = self.questions;
        if [q.audio, q.visual, q.either].iter().any(|f| !(0.0..=1.0).contains(f))
            || (q.audio + q.visual + q.either - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "question fractions must be in [0, 1] and sum to 1, got {q:?}"
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("at least 2 classes are required".into()));
        }
        if self.seq_len == 0 || self.key_dim == 0 {
            return Err(Error::Config("seq_len and key_dim must be positive".into()));
        }
        let r = self.raw_dims;
        if r.audio == 0 || r.visual == 0 || r.text == 0 {
            return Err(Error::Config("raw dims must be positive".into()));
        }
        if !(self.noise >= 0.0) || !(self.key_noise >= 0.0) || !(self.cross_talk >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) || !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::Config("distractor_rate and coupling must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Answer labels: audio attributes, then visual attributes, then events.
    pub fn vocab(&self) -> Vec<String> {
        let c = self.classes;
        (0..c)
            .map(|i| format!("sound{i}"))
            .chain((0..c).map(|i| format!("sight{i}")))
            .chain((0..c).map(|i| format!("event{i}")))
            .collect()
    }

    pub fn label(&self, qtype: QuestionType, factors: Factors) -> usize {
        match qtype {
            QuestionType::Audio => factors.audio,
            QuestionType::Visual => self.classes + factors.visual,
            QuestionType::Either => 2 * self.classes + factors.event,
        }
    }
}

/// Latent factors of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factors {
    pub event: usize,
    pub audio: usize,
    pub visual: usize,
}

/// A generated sample together with its latent factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub bundle: ModalityBundle,
    pub factors: Factors,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub vocab: Vec<String>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SyntheticData {
    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }

    /// Records for a memory bank of `m` built from the training split.
    pub fn bank_records(&self, m: Modality) -> Result<Vec<BankRecord>> {
        self.train
            .iter()
            .map(|s| {
                let value = s
                    .bundle
                    .features(m)
                    .ok_or_else(|| Error::Data(format!("sample {:?} lacks {m}", s.bundle.id)))?
                    .clone();
                Ok(BankRecord {
                    id: s.bundle.id.clone(),
                    key: s.bundle.key.clone(),
                    value,
                })
            })
            .collect()
    }
}

pub fn bundles(samples: &[Sample]) -> Vec<ModalityBundle> {
    samples.iter().map(|s| s.bundle.clone()).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(rng);
                    std * n
                })
                .collect()
        })
        .collect()
}

struct Prototypes {
    audio_event: Vec<Vec<f64>>,
    audio_attr: Vec<Vec<f64>>,
    visual_event: Vec<Vec<f64>>,
    visual_attr: Vec<Vec<f64>>,
    audio_trace: Vec<Vec<f64>>,
    visual_trace: Vec<Vec<f64>>,
    question: Vec<Vec<f64>>,
    key_event: Vec<Vec<f64>>,
    key_audio: Vec<Vec<f64>>,
    key_visual: Vec<Vec<f64>>,
}

impl Prototypes {
    fn draw(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let c = spec.classes;
        let r = spec.raw_dims;
        let ks = 1.0 / (spec.key_dim as f64).sqrt();
        Self {
            audio_event: gaussian(rng, c, r.audio, 1.0),
            audio_attr: gaussian(rng, c, r.audio, 1.0),
            visual_event: gaussian(rng, c, r.visual, 1.0),
            visual_attr: gaussian(rng, c, r.visual, 1.0),
            question: gaussian(rng, 3, r.text, 1.0),
            key_event: gaussian(rng, c, spec.key_dim, ks),
            key_audio: gaussian(rng, c, spec.key_dim, ks),
            key_visual: gaussian(rng, c, spec.key_dim, ks),
            audio_trace: gaussian(rng, c, r.audio, spec.cross_talk),
            visual_trace: gaussian(rng, c, r.visual, spec.cross_talk),
        }
    }
}

fn stream(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
    event: &[Vec<f64>],
    attr: &[Vec<f64>],
    trace: &[f64],
    s: usize,
    a: usize,
) -> Tensor {
    let dim = event[0].len();
    let mut data = Vec::with_capacity(spec.seq_len * dim);
    for _ in 0..spec.seq_len {
        let (ts, ta) = if rng.random_bool(spec.distractor_rate) {
            (rng.random_range(0..spec.classes), rng.random_range(0..spec.classes))
        } else {
            (s, a)
        };
        for c in 0..dim {
            let n: f64 = StandardNormal.sample(rng);
            data.push(event[ts][c] + attr[ta][c] + trace[c] + spec.noise * n);
        }
    }
    Tensor::new(&[spec.seq_len, dim], data).expect("sized above")
}

fn pick_qtype(mix: &QuestionMix, u: f64) -> QuestionType {
    if u < mix.audio {
        QuestionType::Audio
    } else if u < mix.audio + mix.visual {
        QuestionType::Visual
    } else {
        QuestionType::Either
    }
}

fn sample(spec: &SyntheticSpec, p: &Prototypes, rng: &mut ChaCha8Rng, id: String) -> Sample {
    let c = spec.classes;
    let event = rng.random_range(0..c);
    let attribute = |rng: &mut ChaCha8Rng| {
        let free = rng.random_range(0..c);
        if rng.random_bool(spec.coupling) {
            event
        } else {
            free
        }
    };
    let factors = Factors {
        event,
        audio: attribute(rng),
        visual: attribute(rng),
    };
    let qtype = pick_qtype(&spec.questions, rng.random::<f64>());
    let audio = stream(spec, rng, &p.audio_event, &p.audio_attr, &p.visual_trace[factors.visual], factors.event, factors.audio);
    let visual = stream(spec, rng, &p.visual_event, &p.visual_attr, &p.audio_trace[factors.audio], factors.event, factors.visual);
    let q = &p.question[qtype.index()];
    let mut text = Vec::with_capacity(spec.seq_len * q.len());
    for _ in 0..spec.seq_len {
        for &x in q {
            let n: f64 = StandardNormal.sample(rng);
            text.push(x + spec.noise * n);
        }
    }
    let text = Tensor::new(&[spec.seq_len, q.len()], text).expect("sized above");
    let kn = spec.key_noise / (spec.key_dim as f64).sqrt();
    let key = (0..spec.key_dim)
        .map(|i| {
            let n: f64 = StandardNormal.sample(rng);
            p.key_event[factors.event][i] + p.key_audio[factors.audio][i] + p.key_visual[factors.visual][i] + kn * n
        })
        .collect();
    Sample {
        bundle: ModalityBundle {
            id,
            audio: Some(audio),
            visual: Some(visual),
            text,
            label: spec.label(qtype, factors),
            qtype,
            key,
        },
        factors,
    }
}

/// Generates train, validation and test splits. Deterministic in `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = Prototypes::draw(spec, &mut rng);
    let mut split = |name: &str, n: usize| -> Vec<Sample> {
        (0..n)
            .map(|i| sample(spec, &protos, &mut rng, format!("{name}-{i:05}")))
            .collect()
    };
    let train = split("train", spec.train);
    let val = split("val", spec.val);
    let test = split("test", spec.test);
    Ok(SyntheticData {
        spec: spec.clone(),
        vocab: spec.vocab(),
        train,
        val,
        test,
    })
}
