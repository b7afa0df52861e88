use rand::Rng;

use crate::error::{Error, Result};
use crate::model::attention::{init_linear, linear};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Shared gating perceptron: mean-pooled expert output -> tanh hidden layer -> one logit.
///
/// The output layer has no bias: a common offset on every logit cancels in the softmax.
#[derive(Clone, Debug)]
pub struct Router {
    pub dim: usize,
    pub hidden: usize,
}

pub const ROUTER_PREFIX: &str = "router";

impl Router {
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        init_linear(store, "router/l1", self.dim, self.hidden, rng);
        let std = 1.0 / (self.hidden as f64).sqrt();
        store.insert("router/l2/w", Tensor::randn(&[self.hidden, 1], std, rng));
    }

    /// Gating logit `g_m` for one `L x D` representation.
    pub fn logit(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let pooled = g.mean_rows(h)?;
        let pooled = g.reshape(pooled, &[1, self.dim])?;
        let hid = linear(g, store, "router/l1", pooled)?;
        let hid = g.tanh(hid);
        let w2 = g.param(store, "router/l2/w")?;
        let out = g.matmul(hid, w2)?;
        g.reshape(out, &[1])
    }

    /// Mixture weights over the given representations (softmax of their logits).
    pub fn route(&self, g: &mut Graph, store: &ParamStore, reps: &[Var]) -> Result<Var> {
        if reps.is_empty() {
            return Err(Error::EmptySequence("route"));
        }
        let logits = reps
            .iter()
            .map(|&h| self.logit(g, store, h))
            .collect::<Result<Vec<_>>>()?;
        let stacked = g.concat(&logits)?;
        Ok(g.softmax(stacked))
    }

    /// Softmax of explicitly supplied logits; same normalisation as [`Router::route`].
    pub fn weights_from_logits(g: &mut Graph, logits: &[Var]) -> Result<Var> {
        let stacked = g.concat(logits)?;
        Ok(g.softmax(stacked))
    }
}
