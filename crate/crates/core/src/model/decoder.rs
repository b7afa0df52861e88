use rand::Rng;

use crate::error::{Error, Result};
use crate::model::attention::{init_linear, linear};
use crate::numerics::{Graph, ParamStore, Var};

/// Classification head over the mean-pooled joint representation.
#[derive(Clone, Debug)]
pub struct AnswerDecoder {
    pub dim: usize,
    pub hidden: usize,
    pub vocab: usize,
}

pub const DECODER_PREFIX: &str = "decoder";

impl AnswerDecoder {
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        init_linear(store, "decoder/l1", self.dim, self.hidden, rng);
        init_linear(store, "decoder/l2", self.hidden, self.vocab, rng);
    }

    /// Answer logits (length `vocab`) for an `L x D` joint representation.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let pooled = self.pool(g, z)?;
        self.classify(g, store, pooled)
    }

    pub fn pool(&self, g: &mut Graph, z: Var) -> Result<Var> {
        g.mean_rows(z)
    }

    pub fn classify(&self, g: &mut Graph, store: &ParamStore, pooled: Var) -> Result<Var> {
        let x = g.reshape(pooled, &[1, self.dim])?;
        let h = linear(g, store, "decoder/l1", x)?;
        let h = g.tanh(h);
        let o = linear(g, store, "decoder/l2", h)?;
        g.reshape(o, &[self.vocab])
    }
}

/// `Z = sum_m alpha_m * H_m`, token-wise. `alpha` is a rank-1 node with one weight per
/// representation, in the same order as `reps`.
pub fn fuse(g: &mut Graph, alpha: Var, reps: &[Var]) -> Result<Var> {
    if g.value(alpha).len() != reps.len() {
        return Err(Error::shape("fuse", g.shape(alpha), &[reps.len()]));
    }
    let first = *reps.first().ok_or(Error::EmptySequence("fuse"))?;
    for &h in reps {
        if g.shape(h) != g.shape(first) {
            return Err(Error::shape("fuse", g.shape(first), g.shape(h)));
        }
    }
    let mut terms = Vec::with_capacity(reps.len());
    for (m, &h) in reps.iter().enumerate() {
        let a = g.pick(alpha, m)?;
        terms.push(g.scale_by(h, a)?);
    }
    g.add_all(&terms)
}

/// Fusion followed by decoding; returns `(Z_joint, logits)`.
pub fn fuse_decode(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &AnswerDecoder,
    alpha: Var,
    reps: &[Var],
) -> Result<(Var, Var)> {
    let z = fuse(g, alpha, reps)?;
    let logits = decoder.forward(g, store, z)?;
    Ok((z, logits))
}
