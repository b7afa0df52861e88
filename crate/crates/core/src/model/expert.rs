use rand::Rng;

use crate::error::Result;
use crate::model::attention::{init_linear, linear, LayerNormParams, MultiHeadAttention};
use crate::numerics::{Graph, ParamStore, Var};
use crate::types::Modality;

/// One post-norm transformer encoder block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    prefix: String,
    attn: MultiHeadAttention,
    ln1: LayerNormParams,
    ln2: LayerNormParams,
    dim: usize,
    ff_dim: usize,
}

impl EncoderBlock {
    pub fn new(prefix: String, dim: usize, heads: usize, ff_mult: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(format!("{prefix}/attn"), dim, heads)?,
            ln1: LayerNormParams {
                prefix: format!("{prefix}/ln1"),
                dim,
                eps,
            },
            ln2: LayerNormParams {
                prefix: format!("{prefix}/ln2"),
                dim,
                eps,
            },
            prefix,
            dim,
            ff_dim: dim * ff_mult,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.attn.init(store, rng);
        self.ln1.init(store);
        self.ln2.init(store);
        init_linear(store, &format!("{}/ff1", self.prefix), self.dim, self.ff_dim, rng);
        init_linear(store, &format!("{}/ff2", self.prefix), self.ff_dim, self.dim, rng);
    }

    /// Returns the block output and its per-head self-attention maps.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Vec<Var>)> {
        let a = self.attn.forward(g, store, x, x)?;
        let h = g.add(x, a.output)?;
        let h = self.ln1.forward(g, store, h)?;
        let f = linear(g, store, &format!("{}/ff1", self.prefix), h)?;
        let f = g.gelu(f);
        let f = linear(g, store, &format!("{}/ff2", self.prefix), f)?;
        let out = g.add(h, f)?;
        let out = self.ln2.forward(g, store, out)?;
        Ok((out, a.maps))
    }
}

/// Modality-specific transformer encoder. Preserves sequence length and width; there is
/// no dropout, so a forward pass is a pure function of its inputs and parameters.
#[derive(Clone, Debug)]
pub struct Expert {
    pub modality: Modality,
    blocks: Vec<EncoderBlock>,
}

impl Expert {
    pub fn new(
        modality: Modality,
        dim: usize,
        heads: usize,
        depth: usize,
        ff_mult: usize,
        eps: f64,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| {
                EncoderBlock::new(
                    format!("expert/{modality}/block{i}"),
                    dim,
                    heads,
                    ff_mult,
                    eps,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { modality, blocks })
    }

    pub fn prefix(&self) -> String {
        format!("expert/{}/", self.modality)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for b in &self.blocks {
            b.init(store, rng);
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, store, x)?.0)
    }

    /// Forward pass also returning every block's per-head attention maps.
    pub fn forward_with_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut h = x;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, m) = b.forward(g, store, h)?;
            h = out;
            maps.push(m);
        }
        Ok((h, maps))
    }
}
