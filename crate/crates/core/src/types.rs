use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
    Text,
}

impl Modality {
    /// Order used for router logits and mixture weights.
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Text, Modality::Visual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }

    /// The other streamed modality (audio <-> visual).
    pub fn counterpart(self) -> Option<Modality> {
        match self {
            Modality::Audio => Some(Modality::Visual),
            Modality::Visual => Some(Modality::Audio),
            Modality::Text => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Visual => 1,
            Modality::Text => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Modality> {
        match tag {
            0 => Some(Modality::Audio),
            1 => Some(Modality::Visual),
            2 => Some(Modality::Text),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "audio" | "a" => Ok(Modality::Audio),
            "visual" | "v" => Ok(Modality::Visual),
            "text" | "t" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// Which modality a question needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    /// Answerable only from the audio stream.
    Audio,
    /// Answerable only from the visual stream.
    Visual,
    /// Answerable from either stream.
    Either,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::Audio, QuestionType::Visual, QuestionType::Either];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::Audio => "audio",
            QuestionType::Visual => "visual",
            QuestionType::Either => "either",
        }
    }

    pub fn index(self) -> usize {
        match self {
            QuestionType::Audio => 0,
            QuestionType::Visual => 1,
            QuestionType::Either => 2,
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which stream is removed when a sample is made incomplete.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    Audio,
    Visual,
    /// Audio or visual, chosen uniformly per sample.
    #[default]
    Either,
}

impl MissingPolicy {
    /// Whether a bank of `m` entries is needed under this policy.
    pub fn needs(self, m: Modality) -> bool {
        match self {
            MissingPolicy::Audio => m == Modality::Audio,
            MissingPolicy::Visual => m == Modality::Visual,
            MissingPolicy::Either => m != Modality::Text,
        }
    }

    pub fn pick<R: rand::Rng + ?Sized>(self, rng: &mut R) -> Modality {
        match self {
            MissingPolicy::Audio => Modality::Audio,
            MissingPolicy::Visual => Modality::Visual,
            MissingPolicy::Either => {
                if rng.random_bool(0.5) {
                    Modality::Audio
                } else {
                    Modality::Visual
                }
            }
        }
    }
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "audio" => Ok(MissingPolicy::Audio),
            "visual" => Ok(MissingPolicy::Visual),
            "either" => Ok(MissingPolicy::Either),
            other => Err(Error::Config(format!("unknown missing policy {other:?}"))),
        }
    }
}

/// One question-answer sample with whatever streams are present.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBundle {
    pub id: String,
    pub audio: Option<Tensor>,
    pub visual: Option<Tensor>,
    pub text: Tensor,
    pub label: usize,
    pub qtype: QuestionType,
    /// Embedding of the sample in the shared key space used for retrieval.
    pub key: Vec<f64>,
}

impl ModalityBundle {
    pub fn features(&self, m: Modality) -> Option<&Tensor> {
        match m {
            Modality::Audio => self.audio.as_ref(),
            Modality::Visual => self.visual.as_ref(),
            Modality::Text => Some(&self.text),
        }
    }

    pub fn is_available(&self, m: Modality) -> bool {
        self.features(m).is_some()
    }

    /// Availability in `[audio, visual, text]` order.
    pub fn mask(&self) -> [bool; 3] {
        [self.audio.is_some(), self.visual.is_some(), true]
    }

    /// The absent stream, if any.
    pub fn missing(&self) -> Option<Modality> {
        match (&self.audio, &self.visual) {
            (None, _) => Some(Modality::Audio),
            (_, None) => Some(Modality::Visual),
            _ => None,
        }
    }

    /// Removes stream `m` (text cannot be removed).
    pub fn remove(&mut self, m: Modality) -> Result<(), Error> {
        match m {
            Modality::Audio => self.audio = None,
            Modality::Visual => self.visual = None,
            Modality::Text => return Err(Error::Modality("text is always available".into())),
        }
        if self.audio.is_none() && self.visual.is_none() {
            return Err(Error::Data(format!("sample {:?} would lose both streams", self.id)));
        }
        Ok(())
    }
}
