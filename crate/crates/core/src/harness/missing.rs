use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MissingPolicy, Modality, ModalityBundle};

/// Removes a stream from exactly `round(rate * N)` samples chosen with `seed`.
///
/// Every input sample must be complete. The removed stream follows `policy`; under
/// [`MissingPolicy::Either`] it is drawn per chosen sample, in index order.
pub fn simulate_missing(
    samples: &[ModalityBundle],
    rate: f64,
    policy: MissingPolicy,
    seed: u64,
) -> Result<Vec<ModalityBundle>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("missing rate {rate} outside [0, 1]")));
    }
    if let Some(b) = samples.iter().find(|b| b.missing().is_some()) {
        return Err(Error::Data(format!("sample {:?} is already incomplete", b.id)));
    }
    let n = samples.len();
    let count = (rate * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    let mut out = samples.to_vec();
    for i in chosen {
        let m = policy.pick(&mut rng);
        out[i].remove(m)?;
    }
    Ok(out)
}

/// Which streams are present at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Complete,
    AudioMissing,
    VisualMissing,
    /// A seeded fraction of samples loses a stream.
    Rate { rate: f64, policy: MissingPolicy },
}

impl Scenario {
    pub const WHOLE: [Scenario; 3] = [Scenario::AudioMissing, Scenario::VisualMissing, Scenario::Complete];

    pub fn name(self) -> String {
        match self {
            Scenario::Complete => "complete".into(),
            Scenario::AudioMissing => "audio_missing".into(),
            Scenario::VisualMissing => "visual_missing".into(),
            Scenario::Rate { rate, policy } => format!("rate_{rate}_{}", policy_name(policy)),
        }
    }

    pub fn apply(self, samples: &[ModalityBundle], seed: u64) -> Result<Vec<ModalityBundle>> {
        match self {
            Scenario::Complete => simulate_missing(samples, 0.0, MissingPolicy::Either, seed),
            Scenario::AudioMissing => simulate_missing(samples, 1.0, MissingPolicy::Audio, seed),
            Scenario::VisualMissing => simulate_missing(samples, 1.0, MissingPolicy::Visual, seed),
            Scenario::Rate { rate, policy } => simulate_missing(samples, rate, policy, seed),
        }
    }
}

fn policy_name(p: MissingPolicy) -> &'static str {
    match p {
        MissingPolicy::Audio => "audio",
        MissingPolicy::Visual => "visual",
        MissingPolicy::Either => "either",
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "complete" => Ok(Scenario::Complete),
            "audio_missing" => Ok(Scenario::AudioMissing),
            "visual_missing" => Ok(Scenario::VisualMissing),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Scenario label of a single sample, by what it lacks.
pub fn availability_name(b: &ModalityBundle) -> &'static str {
    match b.missing() {
        None => "complete",
        Some(Modality::Audio) => "audio_missing",
        Some(_) => "visual_missing",
    }
}
