use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::purification::PurificationConfig;
use crate::training::AdamConfig;
use crate::types::MissingPolicy;

/// Which recovery components are active for an absent stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixVariant {
    /// Replace the absent stream with retrieved candidates (otherwise zeros).
    pub retrieval: bool,
    /// Purify whatever stands in for the absent stream.
    pub purification: bool,
}

impl MixVariant {
    pub const BASELINE: MixVariant = MixVariant {
        retrieval: false,
        purification: false,
    };
    pub const CAP_ONLY: MixVariant = MixVariant {
        retrieval: false,
        purification: true,
    };
    pub const CMR_ONLY: MixVariant = MixVariant {
        retrieval: true,
        purification: false,
    };
    pub const FULL: MixVariant = MixVariant {
        retrieval: true,
        purification: true,
    };
    pub const ALL: [MixVariant; 4] = [Self::BASELINE, Self::CAP_ONLY, Self::CMR_ONLY, Self::FULL];

    pub fn name(self) -> &'static str {
        match (self.retrieval, self.purification) {
            (false, false) => "baseline",
            (false, true) => "cap",
            (true, false) => "cmr",
            (true, true) => "cmr+cap",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown variant {name:?}")))
    }
}

impl Default for MixVariant {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the ranking hinges.
    pub lambda: f64,
    pub adam: AdamConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    /// Probability that a training sample loses a stream during mixing.
    pub missing_rate: f64,
    pub policy: MissingPolicy,
    pub seed: u64,
    pub purification: PurificationConfig,
    pub variant: MixVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            adam: AdamConfig::default(),
            stage1_epochs: 20,
            stage2_epochs: 20,
            batch_size: 16,
            missing_rate: 0.5,
            policy: MissingPolicy::Either,
            seed: 0,
            purification: PurificationConfig::default(),
            variant: MixVariant::FULL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(Error::Config(format!(
                "missing_rate must lie in [0, 1], got {}",
                self.missing_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.purification.n_retrieve == 0 {
            return Err(Error::Config("n_retrieve must be at least 1".into()));
        }
        Ok(())
    }
}
