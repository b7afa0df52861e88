//! Purification of retrieved features for a missing modality.
//!
//! Three phases: score every retrieved token by its dissonance with the available
//! modality's global context, run a text-guided attention block over the common-knowledge
//! sequence to find the most salient tokens, then overwrite the noisiest retrieved tokens
//! with the most salient guided ones.

mod guidance;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use guidance::{guide_semantics, saliency, GuidanceBlock, GuidanceOutput, SaliencyMode};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{cosine_sim, mean_pool, topk_indices, Graph, ParamStore, Tensor, Var, COSINE_EPS};
use crate::types::Modality;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurificationConfig {
    /// Number of tokens overwritten.
    pub k_purge: usize,
    /// Number of retrieved candidates averaged.
    pub n_retrieve: usize,
    pub eps: f64,
    /// Project retrieved tokens with `cap/proj/{m}` before scoring.
    pub use_projection: bool,
    pub saliency: SaliencyMode,
    /// Permit `k_purge = 0` (injection becomes the identity).
    pub allow_empty_budget: bool,
}

impl Default for PurificationConfig {
    fn default() -> Self {
        Self {
            k_purge: 5,
            n_retrieve: 3,
            eps: COSINE_EPS,
            use_projection: true,
            saliency: SaliencyMode::Received,
            allow_empty_budget: false,
        }
    }
}

impl PurificationConfig {
    /// Checks the budget against a sequence of length `len`.
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.n_retrieve == 0 {
            return Err(Error::Config("n_retrieve must be at least 1".into()));
        }
        if self.k_purge == 0 && !self.allow_empty_budget {
            return Err(Error::Config("k_purge must be at least 1".into()));
        }
        if self.k_purge > len {
            return Err(Error::Budget {
                k: self.k_purge,
                len,
            });
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Phase 1 result.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseProfile {
    pub dissonance: Vec<f64>,
    /// Noisiest first.
    pub noise: Vec<usize>,
    pub mask: Vec<u8>,
}

/// Where a purified token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RetrievedKept,
    /// Copied from this row of the guided sequence.
    InjectedFrom(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::RetrievedKept => f.write_str("retrieved-kept"),
            Provenance::InjectedFrom(j) => write!(f, "injected-from {j}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PurifiedRepresentation {
    pub tokens: Tensor,
    pub provenance: Vec<Provenance>,
}

impl PurifiedRepresentation {
    pub fn injected_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| matches!(p, Provenance::InjectedFrom(_)))
            .count()
    }
}

fn mask_of(len: usize, idx: &[usize]) -> Vec<u8> {
    let mut m = vec![0u8; len];
    for &i in idx {
        m[i] = 1;
    }
    m
}

/// Element-wise mean of the encoded candidates, `E_miss(Phi_miss(r_i))`.
pub fn aggregate_candidates(
    g: &mut Graph,
    store: &ParamStore,
    model: &Model,
    missing: Modality,
    candidates: &[Var],
) -> Result<Var> {
    if candidates.is_empty() {
        return Err(Error::EmptySequence("candidate list"));
    }
    let first = g.shape(candidates[0]).to_vec();
    for &c in &candidates[1..] {
        if g.shape(c) != first.as_slice() {
            return Err(Error::shape("aggregate_candidates", &first, g.shape(c)));
        }
    }
    let encoded = candidates
        .iter()
        .map(|&c| model.represent(g, store, missing, c))
        .collect::<Result<Vec<_>>>()?;
    g.mean_of(&encoded)
}

/// Per-token dissonance `1 - cos(proj(H_miss[i]), mean(H_avl))`.
pub fn dissonance_scores(
    h_miss: &Tensor,
    h_avl: &Tensor,
    proj: Option<&Tensor>,
    eps: f64,
) -> Result<Vec<f64>> {
    if h_miss.rank() != 2 {
        return Err(Error::shape("dissonance_scores", h_miss.shape(), &[]));
    }
    let anchor = mean_pool(h_avl)?;
    let projected;
    let rows = match proj {
        Some(w) => {
            projected = h_miss.matmul(w)?;
            &projected
        }
        None => h_miss,
    };
    if rows.cols() != anchor.len() {
        return Err(Error::shape("dissonance_scores", rows.shape(), anchor.shape()));
    }
    (0..rows.rows())
        .map(|i| Ok(1.0 - cosine_sim(rows.row(i), anchor.data(), eps)?))
        .collect()
}

/// Differentiable form of [`dissonance_scores`]; used to check the projection gradient.
pub fn dissonance_graph(
    g: &mut Graph,
    h_miss: Var,
    h_avl: Var,
    proj: Option<Var>,
    eps: f64,
) -> Result<Var> {
    let anchor = g.mean_rows(h_avl)?;
    let rows = match proj {
        Some(w) => g.matmul(h_miss, w)?,
        None => h_miss,
    };
    let cos = g.cosine_rows(rows, anchor, eps)?;
    let ones = g.constant(Tensor::full(g.shape(cos), 1.0));
    g.sub(ones, cos)
}

/// Phase 1: the `k` tokens least correlated with the available modality.
pub fn profile_noise(
    h_miss: &Tensor,
    h_avl: &Tensor,
    proj: Option<&Tensor>,
    k: usize,
    eps: f64,
) -> Result<NoiseProfile> {
    let dissonance = dissonance_scores(h_miss, h_avl, proj, eps)?;
    let noise = topk_indices(&dissonance, k)?;
    let mask = mask_of(dissonance.len(), &noise);
    Ok(NoiseProfile {
        dissonance,
        noise,
        mask,
    })
}

fn check_pairing(h_miss: &Tensor, noise: &[usize], guidance: &GuidanceOutput) -> Result<()> {
    if noise.len() != guidance.salient.len() {
        return Err(Error::Contract(format!(
            "{} noisy tokens but {} salient tokens",
            noise.len(),
            guidance.salient.len()
        )));
    }
    if h_miss.shape() != guidance.guided.shape() {
        return Err(Error::shape("inject", h_miss.shape(), guidance.guided.shape()));
    }
    Ok(())
}

/// Phase 3: the `j`-th noisiest token receives the `j`-th most salient guided token.
pub fn inject(
    h_miss: &Tensor,
    noise: &NoiseProfile,
    guidance: &GuidanceOutput,
) -> Result<PurifiedRepresentation> {
    check_pairing(h_miss, &noise.noise, guidance)?;
    let mut tokens = h_miss.clone();
    let mut provenance = vec![Provenance::RetrievedKept; h_miss.rows()];
    let d = h_miss.cols();
    for (&dst, &src) in noise.noise.iter().zip(&guidance.salient) {
        tokens.data_mut()[dst * d..(dst + 1) * d].copy_from_slice(guidance.guided.row(src));
        provenance[dst] = Provenance::InjectedFrom(src);
    }
    Ok(PurifiedRepresentation { tokens, provenance })
}

/// Masked form `(1 - M) * H_miss + M * S`, where `S` holds the gathered salient rows at the
/// noisy positions.
pub fn inject_masked(
    h_miss: &Tensor,
    noise: &NoiseProfile,
    guidance: &GuidanceOutput,
) -> Result<Tensor> {
    check_pairing(h_miss, &noise.noise, guidance)?;
    let gathered = guidance.guided.gather_rows(&guidance.salient)?;
    let mut placed = Tensor::zeros(h_miss.shape());
    let d = h_miss.cols();
    for (j, &dst) in noise.noise.iter().enumerate() {
        placed.data_mut()[dst * d..(dst + 1) * d].copy_from_slice(gathered.row(j));
    }
    let mut out = h_miss.clone();
    for i in 0..h_miss.rows() {
        let m = noise.mask[i] as f64;
        for c in 0..d {
            let x = h_miss.get2(i, c);
            let s = placed.get2(i, c);
            out.data_mut()[i * d + c] = (1.0 - m) * x + m * s;
        }
    }
    Ok(out)
}

/// Injection as graph nodes (gather, then scatter).
pub fn inject_graph(
    g: &mut Graph,
    h_miss: Var,
    guided: Var,
    noise: &[usize],
    salient: &[usize],
) -> Result<Var> {
    if noise.len() != salient.len() {
        return Err(Error::Contract(format!(
            "{} noisy tokens but {} salient tokens",
            noise.len(),
            salient.len()
        )));
    }
    if noise.is_empty() {
        return Ok(h_miss);
    }
    let rows = g.gather_rows(guided, salient)?;
    g.scatter_rows(h_miss, rows, noise)
}

/// Intermediate products of one purification.
#[derive(Clone, Debug)]
pub struct PurificationTrace {
    pub missing: Modality,
    pub h_miss: Tensor,
    pub noise: NoiseProfile,
    pub guidance: GuidanceOutput,
    pub purified: PurifiedRepresentation,
}

/// Already-encoded inputs of a purification.
#[derive(Clone, Copy, Debug)]
pub struct EncodedInputs {
    /// Aggregated retrieved sequence.
    pub h_miss: Var,
    /// Available modality, `E_avl(Phi_avl(F_avl))`.
    pub h_avl: Var,
    /// Common knowledge, `E_miss(Phi_avl(F_avl))`.
    pub h_com: Var,
    /// Question, `E_t(Phi_t(F_t))`.
    pub h_t: Var,
}

fn guidance_slot(missing: Modality) -> Result<Modality> {
    match missing {
        Modality::Text => Err(Error::Modality("text cannot be the missing modality".into())),
        m => Ok(m),
    }
}

/// Phase 2 result for one sample, shareable between several retrieved sequences.
#[derive(Clone, Debug)]
pub struct Guided {
    pub node: Var,
    pub output: GuidanceOutput,
}

/// Runs the guidance block of `missing` on the common knowledge and the question.
pub fn guide_sample(
    g: &mut Graph,
    store: &ParamStore,
    model: &Model,
    missing: Modality,
    h_com: Var,
    h_t: Var,
    config: &PurificationConfig,
) -> Result<Guided> {
    let missing = guidance_slot(missing)?;
    config.validate(g.value(h_com).rows())?;
    let (node, output) = guide_semantics(
        g,
        store,
        model.guidance(missing),
        h_com,
        h_t,
        config.k_purge,
        config.saliency,
    )?;
    Ok(Guided { node, output })
}

/// Phases 1 and 3 for one retrieved sequence against an already guided sample.
pub fn purify_guided(
    g: &mut Graph,
    store: &ParamStore,
    missing: Modality,
    h_miss: Var,
    h_avl: &Tensor,
    guided: &Guided,
    config: &PurificationConfig,
) -> Result<(Var, NoiseProfile, PurifiedRepresentation)> {
    let missing = guidance_slot(missing)?;
    let h_miss_value = g.value(h_miss);
    config.validate(h_miss_value.rows())?;
    let proj = if config.use_projection {
        Some(store.value(&Model::projection_name(missing))?)
    } else {
        None
    };
    let noise = profile_noise(h_miss_value, h_avl, proj, config.k_purge, config.eps)?;
    let purified = inject(h_miss_value, &noise, &guided.output)?;
    let out = inject_graph(g, h_miss, guided.node, &noise.noise, &guided.output.salient)?;
    Ok((out, noise, purified))
}

/// Phases 1 to 3 on encoded inputs. Returns the purified node and its trace.
pub fn purify_encoded(
    g: &mut Graph,
    store: &ParamStore,
    model: &Model,
    missing: Modality,
    inputs: EncodedInputs,
    config: &PurificationConfig,
) -> Result<(Var, PurificationTrace)> {
    let guided = guide_sample(g, store, model, missing, inputs.h_com, inputs.h_t, config)?;
    let h_avl = g.value(inputs.h_avl).clone();
    let (out, noise, purified) =
        purify_guided(g, store, missing, inputs.h_miss, &h_avl, &guided, config)?;
    Ok((
        out,
        PurificationTrace {
            missing,
            h_miss: g.value(inputs.h_miss).clone(),
            noise,
            guidance: guided.output,
            purified,
        },
    ))
}

/// Raw inputs of an end-to-end purification.
#[derive(Clone, Copy, Debug)]
pub struct RawInputs<'a> {
    /// Features of the available (non-text) modality.
    pub f_avl: &'a Tensor,
    /// Question features.
    pub f_t: &'a Tensor,
    /// Retrieved value sequences for the missing modality.
    pub candidates: &'a [Tensor],
}

/// Builds every encoded input from raw features, as graph nodes.
pub fn encode_inputs(
    g: &mut Graph,
    store: &ParamStore,
    model: &Model,
    missing: Modality,
    raw: RawInputs<'_>,
) -> Result<EncodedInputs> {
    let missing = guidance_slot(missing)?;
    let available = missing.counterpart().expect("audio or visual");
    let cands: Vec<Var> = raw.candidates.iter().map(|c| g.constant(c.clone())).collect();
    let h_miss = aggregate_candidates(g, store, model, missing, &cands)?;
    let f_avl = g.constant(raw.f_avl.clone());
    let h_avl = model.represent(g, store, available, f_avl)?;
    let h_com = model.common_knowledge(g, store, available, missing, f_avl)?;
    let f_t = g.constant(raw.f_t.clone());
    let h_t = model.represent(g, store, Modality::Text, f_t)?;
    Ok(EncodedInputs {
        h_miss,
        h_avl,
        h_com,
        h_t,
    })
}

/// End-to-end purification with its trace.
pub fn cap_purify_traced(
    model: &Model,
    store: &ParamStore,
    missing: Modality,
    raw: RawInputs<'_>,
    config: &PurificationConfig,
) -> Result<PurificationTrace> {
    let mut g = Graph::new();
    let inputs = encode_inputs(&mut g, store, model, missing, raw)?;
    let (_, trace) = purify_encoded(&mut g, store, model, missing, inputs, config)?;
    Ok(trace)
}

/// End-to-end purification of retrieved candidates for `missing`.
pub fn cap_purify(
    model: &Model,
    store: &ParamStore,
    missing: Modality,
    raw: RawInputs<'_>,
    config: &PurificationConfig,
) -> Result<PurifiedRepresentation> {
    Ok(cap_purify_traced(model, store, missing, raw, config)?.purified)
}

/// Per-sample audit record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebugRecord {
    pub sample_id: String,
    pub missing: Modality,
    pub dissonance: Vec<f64>,
    pub saliency: Vec<f64>,
    pub noise: Vec<usize>,
    pub salient: Vec<usize>,
    pub salient_mask: Vec<u8>,
    pub provenance: Vec<Provenance>,
}

impl DebugRecord {
    pub fn from_trace(sample_id: impl Into<String>, trace: &PurificationTrace) -> Self {
        Self {
            sample_id: sample_id.into(),
            missing: trace.missing,
            dissonance: trace.noise.dissonance.clone(),
            saliency: trace.guidance.saliency.clone(),
            noise: trace.noise.noise.clone(),
            salient: trace.guidance.salient.clone(),
            salient_mask: trace.guidance.salient_mask.clone(),
            provenance: trace.purified.provenance.clone(),
        }
    }
}
