use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Multi-head attention parameters under `prefix`: `wq, bq, wk, wv, bv, wo, bo`.
///
/// There is no key bias: it shifts every score in a query row by the same amount and so
/// has no effect on the softmax.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub prefix: String,
    pub dim: usize,
    pub heads: usize,
}

/// Output of one attention call together with the per-head probability maps
/// (`L_q x L_k` each).
pub struct AttentionOutput {
    pub output: Var,
    pub maps: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(prefix: impl Into<String>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            dim,
            heads,
        })
    }

    fn name(&self, p: &str) -> String {
        format!("{}/{p}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let d = self.dim;
        let std = 1.0 / (d as f64).sqrt();
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(self.name(w), Tensor::randn(&[d, d], std, rng));
        }
        for b in ["bq", "bv", "bo"] {
            store.insert(self.name(b), Tensor::zeros(&[d]));
        }
    }

    fn project(&self, g: &mut Graph, store: &ParamStore, x: Var, w: &str, b: Option<&str>) -> Result<Var> {
        let wv = g.param(store, &self.name(w))?;
        let y = g.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = g.param(store, &self.name(b))?;
                g.add_row(y, bv)
            }
            None => Ok(y),
        }
    }

    /// Attention with queries from `query_src` and keys/values from `kv_src`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query_src: Var,
        kv_src: Var,
    ) -> Result<AttentionOutput> {
        let q = self.project(g, store, query_src, "wq", Some("bq"))?;
        let k = self.project(g, store, kv_src, "wk", None)?;
        let v = self.project(g, store, kv_src, "wv", Some("bv"))?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores);
            heads.push(g.matmul(attn, vh)?);
            maps.push(attn);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let output = self.project(g, store, joined, "wo", Some("bo"))?;
        Ok(AttentionOutput { output, maps })
    }
}

/// Layer-norm parameters `g` (gain) and `b` (bias) under `prefix`.
#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub prefix: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn init(&self, store: &mut ParamStore) {
        store.insert(format!("{}/g", self.prefix), Tensor::full(&[self.dim], 1.0));
        store.insert(format!("{}/b", self.prefix), Tensor::zeros(&[self.dim]));
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, &format!("{}/g", self.prefix))?;
        let bias = g.param(store, &format!("{}/b", self.prefix))?;
        g.layer_norm(x, gain, bias, self.eps)
    }
}

/// `x W + b` for an `L x D_in` input, parameters `{prefix}/w`, `{prefix}/b`.
pub(crate) fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}/w"))?;
    let b = g.param(store, &format!("{prefix}/b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub(crate) fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) {
    let std = 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{prefix}/w"), Tensor::randn(&[fan_in, fan_out], std, rng));
    store.insert(format!("{prefix}/b"), Tensor::zeros(&[fan_out]));
}
