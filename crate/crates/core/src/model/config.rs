use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Modality;

/// Raw input feature width per modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDims {
    pub audio: usize,
    pub visual: usize,
    pub text: usize,
}

impl RawDims {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Audio => self.audio,
            Modality::Visual => self.visual,
            Modality::Text => self.text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Shared model width `D`.
    pub model_dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// Feed-forward width as a multiple of `model_dim`.
    pub ff_mult: usize,
    /// Common sequence length every modality is resampled to.
    pub seq_len: usize,
    pub raw_dims: RawDims,
    pub router_hidden: usize,
    pub decoder_hidden: usize,
    pub answer_vocab: Vec<String>,
    pub guidance_blocks: usize,
    pub use_projection: bool,
    /// Standard deviation of the Gaussian perturbation added to the identity-initialised
    /// purification projection.
    pub projection_init_std: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            heads: 4,
            depth: 2,
            ff_mult: 2,
            seq_len: 12,
            raw_dims: RawDims {
                audio: 24,
                visual: 24,
                text: 8,
            },
            router_hidden: 32,
            decoder_hidden: 64,
            answer_vocab: (0..4).map(|i| format!("ans{i}")).collect(),
            guidance_blocks: 1,
            use_projection: true,
            projection_init_std: 0.01,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be positive".into()));
        }
        if self.answer_vocab.len() < 2 {
            return Err(Error::Config("answer vocabulary needs at least 2 entries".into()));
        }
        if self.ff_mult == 0 || self.router_hidden == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.raw_dims.audio == 0 || self.raw_dims.visual == 0 || self.raw_dims.text == 0 {
            return Err(Error::Config("raw dims must be positive".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.answer_vocab.len()
    }
}
