//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use modality_recall::model::{Model, ModelConfig, RawDims};
use modality_recall::numerics::{grad_check, Graph, ParamStore, Tensor, Var};
use modality_recall::purification::{dissonance_graph, PurificationConfig};
use modality_recall::store::{build_bank, BankRecord, MemoryBank, QuerySpec};
use modality_recall::training::mix::{encode_sample, sample_loss};
use modality_recall::training::{Banks, FrozenContext, MixVariant};
use modality_recall::{Modality, ModalityBundle, QuestionType, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        model_dim: 8,
        heads: 2,
        depth: 2,
        seq_len: 4,
        raw_dims: RawDims {
            audio: 5,
            visual: 6,
            text: 3,
        },
        router_hidden: 4,
        decoder_hidden: 6,
        answer_vocab: (0..4).map(|i| format!("a{i}")).collect(),
        ..ModelConfig::default()
    }
}

/// Leaves only parameters under `prefixes` trainable.
pub fn only(store: &ParamStore, prefixes: &[&str]) -> ParamStore {
    let mut s = store.clone();
    s.freeze_all(true);
    for p in prefixes {
        s.set_frozen(p, false);
    }
    s
}

/// Sums the output against fixed weights so every element reaches the scalar.
pub fn contract(g: &mut Graph, out: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.reshape(g.shape(out))?);
    let prod = g.mul(out, wv)?;
    Ok(g.sum(prod))
}

fn worst<F>(mut per_seed: F) -> f64
where
    F: FnMut(u64) -> f64,
{
    (0..SEEDS).map(&mut per_seed).fold(0.0, f64::max)
}

fn sample(seed: u64, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> ModalityBundle {
    let r = cfg.raw_dims;
    let l = cfg.seq_len;
    ModalityBundle {
        id: format!("s{seed}"),
        audio: Some(Tensor::randn(&[l, r.audio], 1.0, rng)),
        visual: Some(Tensor::randn(&[l, r.visual], 1.0, rng)),
        text: Tensor::randn(&[l, r.text], 1.0, rng),
        label: (seed % 4) as usize,
        qtype: QuestionType::Either,
        key: Tensor::randn(&[6], 1.0, rng).into_data(),
    }
}

fn banks(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Banks {
    let bank = |m: Modality, rng: &mut ChaCha8Rng| {
        let recs = (0..6)
            .map(|i| BankRecord {
                id: format!("b{i}"),
                key: Tensor::randn(&[6], 1.0, rng).into_data(),
                value: Tensor::randn(&[cfg.seq_len, cfg.raw_dims.get(m)], 1.0, rng),
            })
            .collect();
        build_bank(recs, m, "random").unwrap()
    };
    Banks {
        audio: Some(bank(Modality::Audio, rng)),
        visual: Some(bank(Modality::Visual, rng)),
    }
}

/// Worst relative gradient error over all seeds for each trainable component.
pub fn component_grad_errors() -> Vec<(&'static str, f64)> {
    let cfg = tiny_config();
    let model = Model::new(cfg.clone()).unwrap();
    let setup = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = model.init_params(&mut rng);
        (store, rng)
    };
    let check = |store: &ParamStore, f: &dyn Fn(&mut Graph, &ParamStore) -> Result<Var>| -> f64 {
        grad_check(f, store, STEP).unwrap().max_rel_error
    };
    let l = cfg.seq_len;
    let d = cfg.model_dim;
    let mut out = Vec::new();

    out.push((
        "encoders",
        worst(|seed| {
            let (store, mut rng) = setup(seed);
            let m = Modality::ALL[seed as usize % 3];
            let raw = Tensor::randn(&[l, cfg.raw_dims.get(m)], 1.0, &mut rng);
            let w = Tensor::randn(&[l * d], 1.0, &mut rng);
            let store = only(&store, &[&format!("enc/{m}/")]);
            check(&store, &|g, s| {
                let x = g.constant(raw.clone());
                let h = model.encoder(m).forward(g, s, x)?;
                contract(g, h, &w)
            })
        }),
    ));

    out.push((
        "experts",
        worst(|seed| {
            let (store, mut rng) = setup(seed);
            let m = Modality::ALL[seed as usize % 3];
            let h = Tensor::randn(&[l, d], 1.0, &mut rng);
            let w = Tensor::randn(&[l * d], 1.0, &mut rng);
            let store = only(&store, &[&format!("expert/{m}/")]);
            check(&store, &|g, s| {
                let x = g.constant(h.clone());
                let y = model.expert(m).forward(g, s, x)?;
                contract(g, y, &w)
            })
        }),
    ));

    out.push((
        "guidance block",
        worst(|seed| {
            let (store, mut rng) = setup(seed);
            let m = [Modality::Audio, Modality::Visual][seed as usize % 2];
            let h_com = Tensor::randn(&[l, d], 1.0, &mut rng);
            let h_t = Tensor::randn(&[l, d], 1.0, &mut rng);
            let w = Tensor::randn(&[l * d], 1.0, &mut rng);
            let block = model.guidance(m);
            let store = only(&store, &[&block.prefix()]);
            check(&store, &|g, s| {
                let c = g.constant(h_com.clone());
                let t = g.constant(h_t.clone());
                let (y, _, _) = block.forward(g, s, c, t)?;
                contract(g, y, &w)
            })
        }),
    ));

    out.push((
        "dissonance projection",
        worst(|seed| {
            let (store, mut rng) = setup(seed);
            let m = [Modality::Audio, Modality::Visual][seed as usize % 2];
            let h_miss = Tensor::randn(&[l, d], 1.0, &mut rng);
            let h_avl = Tensor::randn(&[l, d], 1.0, &mut rng);
            let w = Tensor::randn(&[l], 1.0, &mut rng);
            let name = Model::projection_name(m);
            let store = only(&store, &[&name]);
            check(&store, &|g, s| {
                let a = g.constant(h_miss.clone());
                let b = g.constant(h_avl.clone());
                let p = g.param(s, &name)?;
                let delta = dissonance_graph(g, a, b, Some(p), 1e-8)?;
                contract(g, delta, &w)
            })
        }),
    ));

    out.push((
        "router",
        worst(|seed| {
            let (store, mut rng) = setup(seed);
            let reps: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[l, d], 1.0, &mut rng)).collect();
            let w = Tensor::randn(&[3], 1.0, &mut rng);
            let store = only(&store, &["router/"]);
            check(&store, &|g, s| {
                let vars: Vec<Var> = reps.iter().map(|r| g.constant(r.clone())).collect();
                let alpha = model.router.route(g, s, &vars)?;
                contract(g, alpha, &w)
            })
        }),
    ));

    out.push((
        "decoder",
        worst(|seed| {
            let (store, mut rng) = setup(seed);
            let z = Tensor::randn(&[l, d], 1.0, &mut rng);
            let w = Tensor::randn(&[cfg.vocab_size()], 1.0, &mut rng);
            let store = only(&store, &["decoder/"]);
            check(&store, &|g, s| {
                let x = g.constant(z.clone());
                let y = model.decoder.forward(g, s, x)?;
                contract(g, y, &w)
            })
        }),
    ));

    out.push((
        "total loss",
        worst(|seed| {
            let (store, mut rng) = setup(seed);
            let b = sample(seed, &mut rng, &cfg);
            let banks = banks(&mut rng, &cfg);
            let pc = PurificationConfig {
                n_retrieve: 2,
                k_purge: 2,
                ..PurificationConfig::default()
            };
            let m = [Modality::Audio, Modality::Visual][seed as usize % 2];
            // Everything the mixing stage trains, except the projection, which only
            // selects tokens and is checked through the dissonance scores above.
            let store = only(&store, &["router/", "decoder/", "cap/guide/"]);
            let ctx = FrozenContext::new(&model, &store, &banks, true).unwrap();
            let reps = encode_sample(&model, &store, &b).unwrap();
            check(&store, &|g, s| {
                let l = sample_loss(g, s, &ctx, &b, &reps, Some(m), MixVariant::FULL, &pc, 0.5)?;
                Ok(l.total)
            })
        }),
    ));
    out
}

pub fn random_bank(seed: u64, n: usize, key_dim: usize) -> MemoryBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| BankRecord {
            id: format!("s{i:05}"),
            key: Tensor::randn(&[key_dim], 1.0, &mut rng).into_data(),
            value: Tensor::randn(&[3, 4], 1.0, &mut rng),
        })
        .collect();
    build_bank(records, Modality::Audio, format!("random seed {seed}")).unwrap()
}

/// Exhaustive oracle: score every admissible entry from the stored f32 keys and sort.
pub fn retrieval_oracle(bank: &MemoryBank, spec: &QuerySpec, descending: bool) -> Vec<String> {
    let qn: f64 = spec.query.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scored: Vec<(usize, f64)> = bank
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| !spec.exclude.contains(&e.id))
        .map(|(i, e)| {
            let k = e.key_f64();
            let dot: f64 = k.iter().zip(&spec.query).map(|(a, b)| a * b).sum();
            let kn: f64 = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            (i, dot / (qn * kn + spec.eps))
        })
        .collect();
    // stable sort: equal scores keep bank order
    if descending {
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    } else {
        scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    }
    scored
        .into_iter()
        .take(spec.n)
        .map(|(i, _)| bank.entry(i).id.clone())
        .collect()
}
