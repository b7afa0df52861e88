//! Forward passes through the frozen experts, recovery of an absent stream, routing and
//! decoding. Shared by expert mixing and evaluation.

use crate::error::{Error, Result};
use crate::model::{fuse_decode, Model};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::purification::{guide_sample, purify_guided, PurificationConfig};
use crate::store::{MemoryBank, QuerySpec};
use crate::training::loss::{ranking_graph, task_loss, total_graph};
use crate::training::MixVariant;
use crate::types::{Modality, ModalityBundle};

/// Memory banks for the two streams that can go missing.
#[derive(Clone, Debug, Default)]
pub struct Banks {
    pub audio: Option<MemoryBank>,
    pub visual: Option<MemoryBank>,
}

impl Banks {
    pub fn get(&self, m: Modality) -> Result<&MemoryBank> {
        let bank = match m {
            Modality::Audio => self.audio.as_ref(),
            Modality::Visual => self.visual.as_ref(),
            Modality::Text => None,
        }
        .ok_or_else(|| Error::Modality(format!("no {m} bank loaded")))?;
        if bank.modality() != m {
            return Err(Error::Modality(format!(
                "bank for {m} holds {} entries",
                bank.modality()
            )));
        }
        Ok(bank)
    }
}

fn stream_slot(m: Modality) -> usize {
    match m {
        Modality::Audio => 0,
        Modality::Visual => 1,
        Modality::Text => unreachable!("text is never absent"),
    }
}

/// Expert outputs that do not change while the experts are frozen.
#[derive(Clone, Debug)]
pub struct FrozenContext<'a> {
    pub model: &'a Model,
    pub banks: &'a Banks,
    encoded: [Option<Vec<Tensor>>; 2],
    zero: [Tensor; 2],
}

impl<'a> FrozenContext<'a> {
    /// Encodes every bank entry (when `retrieval` is set) and the zero stand-ins.
    pub fn new(model: &'a Model, store: &ParamStore, banks: &'a Banks, retrieval: bool) -> Result<Self> {
        let mut encoded = [None, None];
        let mut zero = Vec::new();
        for m in [Modality::Audio, Modality::Visual] {
            let raw = Tensor::zeros(&[model.config.seq_len, model.config.raw_dims.get(m)]);
            zero.push(model.represent_value(store, m, &raw)?);
            if retrieval {
                if let Ok(bank) = banks.get(m) {
                    let reps = (0..bank.len())
                        .map(|i| model.represent_value(store, m, &bank.value(i)))
                        .collect::<Result<Vec<_>>>()?;
                    encoded[stream_slot(m)] = Some(reps);
                }
            }
        }
        let [za, zv]: [Tensor; 2] = zero.try_into().expect("two streams");
        Ok(Self {
            model,
            banks,
            encoded,
            zero: [za, zv],
        })
    }

    fn encoded_bank(&self, m: Modality) -> Result<(&MemoryBank, &[Tensor])> {
        let bank = self.banks.get(m)?;
        let reps = self.encoded[stream_slot(m)]
            .as_deref()
            .ok_or_else(|| Error::Modality(format!("{m} bank was not encoded")))?;
        Ok((bank, reps))
    }

    /// Expert output standing in for an absent stream when nothing is retrieved.
    pub fn zero_rep(&self, m: Modality) -> &Tensor {
        &self.zero[stream_slot(m)]
    }
}

/// Expert outputs of one sample.
#[derive(Clone, Debug)]
pub struct SampleReps {
    pub audio: Option<Tensor>,
    pub visual: Option<Tensor>,
    pub text: Tensor,
    /// Common knowledge for an absent audio stream: visual features through the audio expert.
    pub com_audio: Option<Tensor>,
    /// Common knowledge for an absent visual stream: audio features through the visual expert.
    pub com_visual: Option<Tensor>,
}

impl SampleReps {
    pub fn get(&self, m: Modality) -> Option<&Tensor> {
        match m {
            Modality::Audio => self.audio.as_ref(),
            Modality::Visual => self.visual.as_ref(),
            Modality::Text => Some(&self.text),
        }
    }

    fn common(&self, missing: Modality) -> Option<&Tensor> {
        match missing {
            Modality::Audio => self.com_audio.as_ref(),
            Modality::Visual => self.com_visual.as_ref(),
            Modality::Text => None,
        }
    }
}

pub fn encode_sample(model: &Model, store: &ParamStore, b: &ModalityBundle) -> Result<SampleReps> {
    let rep = |m: Modality| -> Result<Option<Tensor>> {
        b.features(m).map(|f| model.represent_value(store, m, f)).transpose()
    };
    let com = |missing: Modality| -> Result<Option<Tensor>> {
        let avl = missing.counterpart().expect("audio or visual");
        b.features(avl)
            .map(|f| model.common_knowledge_value(store, avl, missing, f))
            .transpose()
    };
    Ok(SampleReps {
        audio: rep(Modality::Audio)?,
        visual: rep(Modality::Visual)?,
        text: model.represent_value(store, Modality::Text, &b.text)?,
        com_audio: com(Modality::Audio)?,
        com_visual: com(Modality::Visual)?,
    })
}

/// Mean of the encoded entries at `idx`, summed left to right.
fn mean_rep(reps: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    let mut acc = reps[idx[0]].clone();
    for &i in &idx[1..] {
        acc.add_assign(&reps[i])?;
    }
    let n = idx.len() as f64;
    Ok(acc.map(|x| x / n))
}

/// Stand-ins for an absent stream: the recovered representation and, when retrieval is
/// active and `negative` is set, the one built from the least similar entries.
#[allow(clippy::too_many_arguments)]
pub fn recover(
    g: &mut Graph,
    store: &ParamStore,
    ctx: &FrozenContext<'_>,
    bundle: &ModalityBundle,
    reps: &SampleReps,
    missing: Modality,
    variant: MixVariant,
    cfg: &PurificationConfig,
    negative: bool,
) -> Result<(Var, Option<Var>)> {
    let (pos, neg) = if variant.retrieval {
        let (bank, encoded) = ctx.encoded_bank(missing)?;
        let spec = QuerySpec::new(bundle.key.clone(), cfg.n_retrieve).excluding(bundle.id.clone());
        let top: Vec<usize> = bank.query_topn(&spec)?.iter().map(|c| c.index).collect();
        let pos = mean_rep(encoded, &top)?;
        let neg = if negative {
            let bottom: Vec<usize> = bank.query_bottomn(&spec)?.iter().map(|c| c.index).collect();
            Some(mean_rep(encoded, &bottom)?)
        } else {
            None
        };
        (pos, neg)
    } else {
        (ctx.zero_rep(missing).clone(), None)
    };
    let pos = g.constant(pos);
    let neg = neg.map(|t| g.constant(t));
    if !variant.purification {
        return Ok((pos, neg));
    }
    let avl = missing.counterpart().expect("audio or visual");
    let h_avl = reps
        .get(avl)
        .ok_or_else(|| Error::Data(format!("sample {:?} has neither stream", bundle.id)))?
        .clone();
    let h_com = g.constant(reps.common(missing).expect("available stream").clone());
    let h_t = g.constant(reps.text.clone());
    let guided = guide_sample(g, store, ctx.model, missing, h_com, h_t, cfg)?;
    let (pos, _, _) = purify_guided(g, store, missing, pos, &h_avl, &guided, cfg)?;
    let neg = match neg {
        Some(n) => Some(purify_guided(g, store, missing, n, &h_avl, &guided, cfg)?.0),
        None => None,
    };
    Ok((pos, neg))
}

/// Routes and decodes representations given in `[audio, visual, text]` order.
/// Returns `(alpha, z_joint, logits)`; `alpha` follows [`Modality::ALL`].
pub fn mix(g: &mut Graph, store: &ParamStore, model: &Model, audio: Var, visual: Var, text: Var) -> Result<(Var, Var, Var)> {
    let ordered: Vec<Var> = Modality::ALL
        .iter()
        .map(|m| match m {
            Modality::Audio => audio,
            Modality::Visual => visual,
            Modality::Text => text,
        })
        .collect();
    let alpha = model.router.route(g, store, &ordered)?;
    let (z, logits) = fuse_decode(g, store, &model.decoder, alpha, &ordered)?;
    Ok((alpha, z, logits))
}

/// Loss terms of one training sample.
#[derive(Clone, Copy, Debug)]
pub struct SampleLoss {
    pub total: Var,
    pub task: f64,
    pub rank_pos: f64,
    pub rank_neg: f64,
}

/// Task loss on the recovered representation plus the ranking hinges when a triplet exists.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss(
    g: &mut Graph,
    store: &ParamStore,
    ctx: &FrozenContext<'_>,
    bundle: &ModalityBundle,
    reps: &SampleReps,
    missing: Option<Modality>,
    variant: MixVariant,
    cfg: &PurificationConfig,
    lambda: f64,
) -> Result<SampleLoss> {
    let text = g.constant(reps.text.clone());
    let truth = |g: &mut Graph, m: Modality| -> Result<Var> {
        let t = reps
            .get(m)
            .ok_or_else(|| Error::Data(format!("sample {:?} lacks {m} features", bundle.id)))?;
        Ok(g.constant(t.clone()))
    };
    let Some(m) = missing else {
        let a = truth(g, Modality::Audio)?;
        let v = truth(g, Modality::Visual)?;
        let (_, _, logits) = mix(g, store, ctx.model, a, v, text)?;
        let task = task_loss(g, logits, bundle.label)?;
        let tv = g.value(task).item()?;
        return Ok(SampleLoss {
            total: task,
            task: tv,
            rank_pos: 0.0,
            rank_neg: 0.0,
        });
    };
    let other = m.counterpart().expect("audio or visual");
    let avl = truth(g, other)?;
    let (pos, neg) = recover(g, store, ctx, bundle, reps, m, variant, cfg, true)?;
    let place = |rec: Var| if m == Modality::Audio { (rec, avl) } else { (avl, rec) };

    let (a, v) = place(pos);
    let (_, _, logits) = mix(g, store, ctx.model, a, v, text)?;
    let task = task_loss(g, logits, bundle.label)?;
    let tv = g.value(task).item()?;
    let Some(neg) = neg else {
        return Ok(SampleLoss {
            total: task,
            task: tv,
            rank_pos: 0.0,
            rank_neg: 0.0,
        });
    };
    let gt = truth(g, m)?;
    let (a, v) = place(gt);
    let (_, _, logits_gt) = mix(g, store, ctx.model, a, v, text)?;
    let loss_gt = task_loss(g, logits_gt, bundle.label)?;
    let (a, v) = place(neg);
    let (_, _, logits_neg) = mix(g, store, ctx.model, a, v, text)?;
    let loss_neg = task_loss(g, logits_neg, bundle.label)?;
    let (rp, rn) = ranking_graph(g, loss_gt, task, loss_neg)?;
    let total = total_graph(g, task, rp, rn, lambda)?;
    Ok(SampleLoss {
        total,
        task: tv,
        rank_pos: g.value(rp).item()?,
        rank_neg: g.value(rn).item()?,
    })
}

/// Model output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub logits: Vec<f64>,
    /// Mixture weights in [`Modality::ALL`] order.
    pub alpha: [f64; 3],
    /// Mean-pooled joint representation.
    pub pooled: Vec<f64>,
}

/// Predicts the answer using whatever streams `bundle` carries, recovering an absent one.
pub fn predict(
    store: &ParamStore,
    ctx: &FrozenContext<'_>,
    bundle: &ModalityBundle,
    variant: MixVariant,
    cfg: &PurificationConfig,
) -> Result<Prediction> {
    let reps = encode_sample(ctx.model, store, bundle)?;
    predict_encoded(store, ctx, bundle, &reps, variant, cfg)
}

pub fn predict_encoded(
    store: &ParamStore,
    ctx: &FrozenContext<'_>,
    bundle: &ModalityBundle,
    reps: &SampleReps,
    variant: MixVariant,
    cfg: &PurificationConfig,
) -> Result<Prediction> {
    let mut g = Graph::new();
    let text = g.constant(reps.text.clone());
    let slot = |g: &mut Graph, m: Modality| -> Result<Var> {
        match reps.get(m) {
            Some(t) => Ok(g.constant(t.clone())),
            None => Ok(recover(g, store, ctx, bundle, reps, m, variant, cfg, false)?.0),
        }
    };
    let a = slot(&mut g, Modality::Audio)?;
    let v = slot(&mut g, Modality::Visual)?;
    let (alpha, z, logits) = mix(&mut g, store, ctx.model, a, v, text)?;
    let lv = g.value(logits).data().to_vec();
    let label = crate::numerics::topk_indices(&lv, 1)?[0];
    let al = g.value(alpha).data();
    let pooled = crate::numerics::mean_pool(g.value(z))?.into_data();
    Ok(Prediction {
        label,
        logits: lv,
        alpha: [al[0], al[1], al[2]],
        pooled,
    })
}
