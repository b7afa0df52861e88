//! Feature encoders, modality experts, the gating router and the answer decoder.
//!
//! Parameter paths:
//!
//! | prefix                  | component                                  |
//! |-------------------------|--------------------------------------------|
//! | `enc/{m}/`              | raw-feature projection for modality `m`     |
//! | `expert/{m}/block{i}/`  | transformer blocks of the `m` expert       |
//! | `router/`               | shared gating perceptron                   |
//! | `decoder/`              | answer head                                |
//! | `cap/proj/{m}`          | dissonance projection when `m` is missing  |
//! | `cap/guide/{m}/`        | guidance blocks when `m` is missing        |

mod attention;
pub mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod expert;
mod router;

use rand::Rng;

pub use attention::{AttentionOutput, LayerNormParams, MultiHeadAttention};
pub use config::{ModelConfig, RawDims};
pub use decoder::{fuse, fuse_decode, AnswerDecoder, DECODER_PREFIX};
pub use encoder::FeatureEncoder;
pub use expert::{EncoderBlock, Expert};
pub use router::{Router, ROUTER_PREFIX};

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::purification::GuidanceBlock;
use crate::types::Modality;

/// Prefixes frozen during expert mixing.
pub const EXPERT_PREFIXES: [&str; 2] = ["enc/", "expert/"];

/// Every component of the answer model, without parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    encoders: [FeatureEncoder; 3],
    experts: [Expert; 3],
    pub router: Router,
    pub decoder: AnswerDecoder,
    guidance: [GuidanceBlock; 2],
}

fn slot(m: Modality) -> usize {
    match m {
        Modality::Audio => 0,
        Modality::Visual => 1,
        Modality::Text => 2,
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let enc = |m: Modality| FeatureEncoder::new(m, c.raw_dims.get(m), c.model_dim, c.seq_len);
        let exp = |m: Modality| Expert::new(m, c.model_dim, c.heads, c.depth, c.ff_mult, c.ln_eps);
        let guide = |m: Modality| GuidanceBlock::new(m, c);
        Ok(Self {
            encoders: [enc(Modality::Audio), enc(Modality::Visual), enc(Modality::Text)],
            experts: [exp(Modality::Audio)?, exp(Modality::Visual)?, exp(Modality::Text)?],
            router: Router {
                dim: c.model_dim,
                hidden: c.router_hidden,
            },
            decoder: AnswerDecoder {
                dim: c.model_dim,
                hidden: c.decoder_hidden,
                vocab: c.vocab_size(),
            },
            guidance: [guide(Modality::Audio)?, guide(Modality::Visual)?],
            config,
        })
    }

    pub fn encoder(&self, m: Modality) -> &FeatureEncoder {
        &self.encoders[slot(m)]
    }

    pub fn expert(&self, m: Modality) -> &Expert {
        &self.experts[slot(m)]
    }

    /// Guidance block used when `missing` is absent. Panics for text.
    pub fn guidance(&self, missing: Modality) -> &GuidanceBlock {
        assert!(missing != Modality::Text, "text is never missing");
        &self.guidance[slot(missing)]
    }

    pub fn projection_name(missing: Modality) -> String {
        format!("cap/proj/{missing}")
    }

    /// Fresh parameters for every component.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        for e in &self.encoders {
            e.init(&mut store, rng);
        }
        for e in &self.experts {
            e.init(&mut store, rng);
        }
        self.router.init(&mut store, rng);
        self.decoder.init(&mut store, rng);
        let d = self.config.model_dim;
        for m in [Modality::Audio, Modality::Visual] {
            let noise = Tensor::randn(&[d, d], self.config.projection_init_std, rng);
            let proj = Tensor::identity(d).add(&noise).expect("same shape");
            store.insert(Self::projection_name(m), proj);
            self.guidance(m).init(&mut store, rng);
        }
        store
    }

    /// `E_m(Phi_m(raw))`.
    pub fn represent(&self, g: &mut Graph, store: &ParamStore, m: Modality, raw: Var) -> Result<Var> {
        let h = self.encoder(m).forward(g, store, raw)?;
        self.expert(m).forward(g, store, h)
    }

    /// Common knowledge: `available` features through their own encoder, then the
    /// `missing` modality's expert.
    pub fn common_knowledge(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        available: Modality,
        missing: Modality,
        raw: Var,
    ) -> Result<Var> {
        let h = self.encoder(available).forward(g, store, raw)?;
        self.expert(missing).forward(g, store, h)
    }

    /// Value-only forward of `E_m(Phi_m(raw))`.
    pub fn represent_value(&self, store: &ParamStore, m: Modality, raw: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(raw.clone());
        let h = self.represent(&mut g, store, m, x)?;
        Ok(g.value(h).clone())
    }

    pub fn common_knowledge_value(
        &self,
        store: &ParamStore,
        available: Modality,
        missing: Modality,
        raw: &Tensor,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(raw.clone());
        let h = self.common_knowledge(&mut g, store, available, missing, x)?;
        Ok(g.value(h).clone())
    }
}
