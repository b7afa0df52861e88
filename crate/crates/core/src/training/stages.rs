use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, EXPERT_PREFIXES};
use crate::numerics::{Graph, ParamGrads, ParamStore, Var};
use crate::training::loss::task_loss;
use crate::training::mix::{encode_sample, predict_encoded, sample_loss, Banks, FrozenContext, SampleReps};
use crate::training::{Adam, EpochRecord, TrainConfig, TrainLog};
use crate::types::{Modality, ModalityBundle, QuestionType};

/// Prefixes left untouched while the experts are pre-trained.
const MIXING_PREFIXES: [&str; 2] = ["router/", "cap/"];

fn require_complete(data: &[ModalityBundle]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if let Some(b) = data.iter().find(|b| b.missing().is_some()) {
        return Err(Error::Data(format!("training sample {:?} is incomplete", b.id)));
    }
    Ok(())
}

fn add_grads(acc: &mut ParamGrads, grads: ParamGrads) -> Result<()> {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(existing) => existing.add_assign(&g)?,
            None => {
                acc.insert(name, g);
            }
        }
    }
    Ok(())
}

fn frozen_flags(store: &ParamStore) -> BTreeMap<String, bool> {
    store.iter().map(|(n, p)| (n.clone(), p.frozen)).collect()
}

fn restore_flags(store: &mut ParamStore, flags: &BTreeMap<String, bool>) -> Result<()> {
    for (n, &f) in flags {
        store.get_mut(n)?.frozen = f;
    }
    Ok(())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Equal-weight fusion of the given expert outputs, decoded.
fn uniform_logits(g: &mut Graph, store: &ParamStore, model: &Model, reps: &[Var]) -> Result<Var> {
    let z = g.mean_of(reps)?;
    model.decoder.forward(g, store, z)
}

/// Stage-I objectives for one complete sample: audio with the question, visual with the
/// question (each only when the question is answerable from that stream), and all three
/// streams together.
fn pretrain_loss(g: &mut Graph, store: &ParamStore, model: &Model, b: &ModalityBundle) -> Result<Var> {
    let rep = |g: &mut Graph, m: Modality| -> Result<Var> {
        let raw = g.constant(b.features(m).expect("complete sample").clone());
        model.represent(g, store, m, raw)
    };
    let ha = rep(g, Modality::Audio)?;
    let hv = rep(g, Modality::Visual)?;
    let ht = rep(g, Modality::Text)?;
    let mut terms = Vec::new();
    if b.qtype != QuestionType::Visual {
        let l = uniform_logits(g, store, model, &[ha, ht])?;
        terms.push(task_loss(g, l, b.label)?);
    }
    if b.qtype != QuestionType::Audio {
        let l = uniform_logits(g, store, model, &[hv, ht])?;
        terms.push(task_loss(g, l, b.label)?);
    }
    let l = uniform_logits(g, store, model, &[ha, ht, hv])?;
    terms.push(task_loss(g, l, b.label)?);
    g.add_all(&terms)
}

/// Accuracy of the equal-weight trimodal pass.
fn pretrain_accuracy(store: &ParamStore, model: &Model, data: &[ModalityBundle]) -> Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for b in data {
        let mut g = Graph::new();
        let mut reps = Vec::new();
        for m in [Modality::Audio, Modality::Text, Modality::Visual] {
            let raw = b
                .features(m)
                .ok_or_else(|| Error::Data(format!("evaluation sample {:?} is incomplete", b.id)))?;
            let raw = g.constant(raw.clone());
            reps.push(model.represent(&mut g, store, m, raw)?);
        }
        let l = uniform_logits(&mut g, store, model, &reps)?;
        if crate::numerics::topk_indices(g.value(l).data(), 1)?[0] == b.label {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / data.len() as f64))
}

/// Expert pre-training: encoders, experts and the decoder learn from per-stream and joint
/// objectives. Router and purification parameters stay untouched.
pub fn stage1_pretrain(
    model: &Model,
    store: &mut ParamStore,
    train: &[ModalityBundle],
    eval: &[ModalityBundle],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    require_complete(train)?;
    let flags = frozen_flags(store);
    for p in MIXING_PREFIXES {
        store.set_frozen(p, true);
    }
    let result = run_stage1(model, store, train, eval, cfg);
    restore_flags(store, &flags)?;
    result
}

fn run_stage1(
    model: &Model,
    store: &mut ParamStore,
    train: &[ModalityBundle],
    eval: &[ModalityBundle],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let mut rng = rng_for(cfg.seed, 1);
    let mut opt = Adam::new(cfg.adam);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.stage1_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = ParamGrads::new();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut g = Graph::new();
                let loss = pretrain_loss(&mut g, store, model, &train[i])?;
                loss_sum += g.value(loss).item()?;
                let scaled = g.scale(loss, scale);
                add_grads(&mut acc, g.backward(scaled)?)?;
            }
            opt.step(store, &acc)?;
        }
        let mean = loss_sum / train.len() as f64;
        log.records.push(EpochRecord {
            stage: "stage1".into(),
            epoch,
            steps: opt.steps(),
            task_loss: mean,
            rank_pos: 0.0,
            rank_neg: 0.0,
            total_loss: mean,
            expert_load: None,
            accuracy: pretrain_accuracy(store, model, eval)?,
        });
    }
    Ok(log)
}

/// Mean expert load and accuracy over `eval`, using each sample's own availability.
pub fn mixing_summary(
    store: &ParamStore,
    ctx: &FrozenContext<'_>,
    eval: &[ModalityBundle],
    cfg: &TrainConfig,
) -> Result<Option<(BTreeMap<String, f64>, f64)>> {
    if eval.is_empty() {
        return Ok(None);
    }
    let mut load = [0.0; 3];
    let mut correct = 0usize;
    for b in eval {
        let reps = encode_sample(ctx.model, store, b)?;
        let p = predict_encoded(store, ctx, b, &reps, cfg.variant, &cfg.purification)?;
        for (l, a) in load.iter_mut().zip(p.alpha) {
            *l += a;
        }
        if p.label == b.label {
            correct += 1;
        }
    }
    let n = eval.len() as f64;
    let map = Modality::ALL
        .iter()
        .zip(load)
        .map(|(m, l)| (m.name().to_string(), l / n))
        .collect();
    Ok(Some((map, correct as f64 / n)))
}

/// Expert mixing: encoders and experts are frozen; router, decoder, projection and
/// guidance blocks learn from task and ranking losses under simulated missingness.
pub fn stage2_mix(
    model: &Model,
    store: &mut ParamStore,
    train: &[ModalityBundle],
    banks: &Banks,
    eval: &[ModalityBundle],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    require_complete(train)?;
    if cfg.variant.retrieval && cfg.missing_rate > 0.0 {
        for m in [Modality::Audio, Modality::Visual] {
            if cfg.policy.needs(m) {
                banks.get(m)?;
            }
        }
    }
    let flags = frozen_flags(store);
    for p in EXPERT_PREFIXES {
        store.set_frozen(p, true);
    }
    let result = run_stage2(model, store, train, banks, eval, cfg);
    restore_flags(store, &flags)?;
    result
}

fn run_stage2(
    model: &Model,
    store: &mut ParamStore,
    train: &[ModalityBundle],
    banks: &Banks,
    eval: &[ModalityBundle],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let ctx = FrozenContext::new(model, store, banks, cfg.variant.retrieval)?;
    let reps: Vec<SampleReps> = train
        .iter()
        .map(|b| encode_sample(model, store, b))
        .collect::<Result<_>>()?;
    let mut rng = rng_for(cfg.seed, 2);
    let mut opt = Adam::new(cfg.adam);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.stage2_epochs {
        order.shuffle(&mut rng);
        let (mut task, mut rp, mut rn, mut total) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = ParamGrads::new();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let missing = if rng.random_bool(cfg.missing_rate) {
                    Some(cfg.policy.pick(&mut rng))
                } else {
                    None
                };
                let mut g = Graph::new();
                let l = sample_loss(
                    &mut g,
                    store,
                    &ctx,
                    &train[i],
                    &reps[i],
                    missing,
                    cfg.variant,
                    &cfg.purification,
                    cfg.lambda,
                )?;
                task += l.task;
                rp += l.rank_pos;
                rn += l.rank_neg;
                total += g.value(l.total).item()?;
                let scaled = g.scale(l.total, scale);
                add_grads(&mut acc, g.backward(scaled)?)?;
            }
            opt.step(store, &acc)?;
        }
        let n = train.len() as f64;
        let summary = mixing_summary(store, &ctx, eval, cfg)?;
        log.records.push(EpochRecord {
            stage: "stage2".into(),
            epoch,
            steps: opt.steps(),
            task_loss: task / n,
            rank_pos: rp / n,
            rank_neg: rn / n,
            total_loss: total / n,
            expert_load: summary.as_ref().map(|s| s.0.clone()),
            accuracy: summary.map(|s| s.1),
        });
    }
    Ok(log)
}
