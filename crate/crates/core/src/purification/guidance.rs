use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerNormParams, ModelConfig, MultiHeadAttention};
use crate::numerics::{topk_indices, Graph, ParamStore, Tensor, Var};
use crate::types::Modality;

/// How per-token attention mass is turned into a saliency score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMode {
    /// Self-attention mass each token *receives* (column sums over queries) plus the
    /// cross-attention row sums.
    #[default]
    Received,
    /// Row sums of both maps. Every softmax row sums to one, so this is constant per token
    /// up to rounding and the selection degenerates to the index tie-break.
    RowSum,
}

/// Self-attention over the common-knowledge sequence followed by cross-attention into the
/// question sequence, each with a residual connection and layer norm.
#[derive(Clone, Debug)]
pub struct GuidanceBlock {
    pub missing: Modality,
    layers: Vec<GuidanceLayer>,
}

#[derive(Clone, Debug)]
struct GuidanceLayer {
    sa: MultiHeadAttention,
    ln1: LayerNormParams,
    ca: MultiHeadAttention,
    ln2: LayerNormParams,
}

/// Everything phase 2 produces for one sample.
#[derive(Clone, Debug)]
pub struct GuidanceOutput {
    pub guided: Tensor,
    /// Per-head self-attention maps (`L x L`), all layers in order.
    pub self_maps: Vec<Tensor>,
    /// Per-head cross-attention maps (`L x L_t`), all layers in order.
    pub cross_maps: Vec<Tensor>,
    pub saliency: Vec<f64>,
    pub salient: Vec<usize>,
    pub salient_mask: Vec<u8>,
}

impl GuidanceBlock {
    pub fn new(missing: Modality, config: &ModelConfig) -> Result<Self> {
        let d = config.model_dim;
        let layers = (0..config.guidance_blocks)
            .map(|i| {
                let p = format!("cap/guide/{missing}/block{i}");
                Ok(GuidanceLayer {
                    sa: MultiHeadAttention::new(format!("{p}/sa"), d, config.heads)?,
                    ln1: LayerNormParams {
                        prefix: format!("{p}/ln1"),
                        dim: d,
                        eps: config.ln_eps,
                    },
                    ca: MultiHeadAttention::new(format!("{p}/ca"), d, config.heads)?,
                    ln2: LayerNormParams {
                        prefix: format!("{p}/ln2"),
                        dim: d,
                        eps: config.ln_eps,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { missing, layers })
    }

    pub fn prefix(&self) -> String {
        format!("cap/guide/{}/", self.missing)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in &self.layers {
            l.sa.init(store, rng);
            l.ln1.init(store);
            l.ca.init(store, rng);
            l.ln2.init(store);
        }
    }

    /// Returns `H_guided` and the self/cross per-head attention maps.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h_com: Var,
        h_t: Var,
    ) -> Result<(Var, Vec<Var>, Vec<Var>)> {
        let mut h = h_com;
        let mut self_maps = Vec::new();
        let mut cross_maps = Vec::new();
        for l in &self.layers {
            let sa = l.sa.forward(g, store, h, h)?;
            let x = g.add(h, sa.output)?;
            let x = l.ln1.forward(g, store, x)?;
            let ca = l.ca.forward(g, store, x, h_t)?;
            let y = g.add(x, ca.output)?;
            h = l.ln2.forward(g, store, y)?;
            self_maps.extend(sa.maps);
            cross_maps.extend(ca.maps);
        }
        Ok((h, self_maps, cross_maps))
    }
}

/// Per-token saliency of the query-side sequence.
///
/// For token `i`: `cross_i + self_i`, where `cross_i` sums row `i` of every cross map and
/// `self_i` sums row `i` ([`SaliencyMode::RowSum`]) or column `i`
/// ([`SaliencyMode::Received`]) of every self map. Maps are visited in order and each
/// inner sum runs over ascending indices.
pub fn saliency(self_maps: &[Tensor], cross_maps: &[Tensor], len: usize, mode: SaliencyMode) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let mut cross = 0.0;
            for a in cross_maps {
                cross += a.row(i).iter().sum::<f64>();
            }
            let mut own = 0.0;
            for a in self_maps {
                own += match mode {
                    SaliencyMode::RowSum => a.row(i).iter().sum::<f64>(),
                    SaliencyMode::Received => (0..a.rows()).map(|q| a.get2(q, i)).sum::<f64>(),
                };
            }
            cross + own
        })
        .collect()
}

/// Phase 2: runs the guidance block and picks the `k` most salient tokens.
pub fn guide_semantics(
    g: &mut Graph,
    store: &ParamStore,
    block: &GuidanceBlock,
    h_com: Var,
    h_t: Var,
    k: usize,
    mode: SaliencyMode,
) -> Result<(Var, GuidanceOutput)> {
    let len = g.value(h_com).rows();
    if k > len {
        return Err(Error::Budget { k, len });
    }
    let (guided, sm, cm) = block.forward(g, store, h_com, h_t)?;
    let self_maps: Vec<Tensor> = sm.iter().map(|&v| g.value(v).clone()).collect();
    let cross_maps: Vec<Tensor> = cm.iter().map(|&v| g.value(v).clone()).collect();
    let sal = saliency(&self_maps, &cross_maps, len, mode);
    let salient = topk_indices(&sal, k)?;
    let mut salient_mask = vec![0u8; len];
    for &i in &salient {
        salient_mask[i] = 1;
    }
    Ok((
        guided,
        GuidanceOutput {
            guided: g.value(guided).clone(),
            self_maps,
            cross_maps,
            saliency: sal,
            salient,
            salient_mask,
        },
    ))
}
