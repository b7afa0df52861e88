//! Multi-seed experiment runners: the four-variant ablation and one-parameter sweeps.
//!
//! Each seed generates its own data, pre-trains the experts once and then trains the mixing
//! stage separately for every variant or sweep value, starting from the same stage-I
//! parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::harness::dataset::spec_fingerprint;
use crate::harness::eval::{evaluate, EvalReport, Fingerprint};
use crate::harness::missing::Scenario;
use crate::harness::synthetic::{bundles, gen_synthetic, SyntheticData, SyntheticSpec};
use crate::model::{Model, ModelConfig};
use crate::numerics::ParamStore;
use crate::store::build_bank;
use crate::training::{stage1_pretrain, stage2_mix, Banks, MixVariant, TrainConfig, TrainLog};
use crate::types::{MissingPolicy, Modality};

/// Everything a multi-seed experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: SyntheticSpec,
    /// Answer vocabulary, raw dims and sequence length are overridden from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Run `i` uses seed `base_seed + i` for data, initialisation and training.
    pub base_seed: u64,
    pub seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut train = TrainConfig {
            stage1_epochs: 15,
            stage2_epochs: 20,
            ..TrainConfig::default()
        };
        train.adam.lr = 2e-3;
        Self {
            data: SyntheticSpec::default(),
            model: ModelConfig {
                model_dim: 32,
                heads: 4,
                depth: 1,
                ff_mult: 2,
                router_hidden: 16,
                decoder_hidden: 32,
                ..ModelConfig::default()
            },
            train,
            base_seed: 0,
            seeds: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }

    /// The data spec used for `seed`.
    pub fn data_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            ..self.data.clone()
        }
    }

    /// The model config adapted to `spec`.
    pub fn model_config(&self, spec: &SyntheticSpec) -> ModelConfig {
        ModelConfig {
            answer_vocab: spec.vocab(),
            raw_dims: spec.raw_dims,
            seq_len: spec.seq_len,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config(&self.data).validate()?;
        self.train.validate()?;
        if self.seeds == 0 {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// Data, pre-trained experts and memory banks of one seed.
pub struct SeedRun {
    pub seed: u64,
    pub data: SyntheticData,
    pub data_fingerprint: String,
    pub model: Model,
    pub stage1: ParamStore,
    pub stage1_log: TrainLog,
    pub banks: Banks,
}

pub fn build_banks(data: &SyntheticData) -> Result<Banks> {
    let bank = |m: Modality| build_bank(data.bank_records(m)?, m, format!("{} train split", data.spec.seed));
    Ok(Banks {
        audio: Some(bank(Modality::Audio)?),
        visual: Some(bank(Modality::Visual)?),
    })
}

/// Generates data for `seed`, pre-trains the experts and builds both banks.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let spec = cfg.data_spec(seed);
    let data = gen_synthetic(&spec)?;
    let model = Model::new(cfg.model_config(&spec))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = model.init_params(&mut rng);
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let stage1_log = stage1_pretrain(&model, &mut store, &bundles(&data.train), &bundles(&data.val), &train_cfg)?;
    let banks = build_banks(&data)?;
    Ok(SeedRun {
        seed,
        data_fingerprint: spec_fingerprint(&spec)?,
        data,
        model,
        stage1: store,
        stage1_log,
        banks,
    })
}

pub fn prepare_runs(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.seed_list().into_iter().map(|s| prepare_seed(cfg, s)).collect()
}

impl SeedRun {
    /// Trains the mixing stage from the stage-I parameters. Expert loads are tracked on the
    /// validation split under the training missing rate.
    pub fn train_mixing(&self, cfg: &TrainConfig) -> Result<(ParamStore, TrainLog)> {
        let cfg = TrainConfig {
            seed: self.seed,
            ..cfg.clone()
        };
        let val = Scenario::Rate {
            rate: cfg.missing_rate,
            policy: cfg.policy,
        }
        .apply(&bundles(&self.data.val), self.seed)?;
        let mut store = self.stage1.clone();
        let log = stage2_mix(&self.model, &mut store, &bundles(&self.data.train), &self.banks, &val, &cfg)?;
        Ok((store, log))
    }

    /// Evaluates `store` on the test split under `scenario`.
    pub fn evaluate(&self, store: &ParamStore, cfg: &TrainConfig, scenario: Scenario) -> Result<EvalReport> {
        let test = scenario.apply(&bundles(&self.data.test), self.seed)?;
        let fp = Fingerprint::new(self.seed, self.data_fingerprint.clone(), cfg, store.checksum(""))?;
        evaluate(
            &self.model,
            store,
            &self.banks,
            &test,
            cfg.variant,
            &cfg.purification,
            &scenario.name(),
            fp,
        )
    }
}

/// Mean and per-seed values of one measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub per_seed: Vec<f64>,
}

impl Summary {
    pub fn new(per_seed: Vec<f64>) -> Self {
        let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
        Self { mean, per_seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub audio_missing: Summary,
    pub visual_missing: Summary,
    pub complete: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// Data fingerprint per seed, shared by every variant.
    pub data_fingerprints: Vec<String>,
    /// Training-time missing rate.
    pub missing_rate: f64,
    pub rows: Vec<AblationRow>,
    /// Mixing-stage logs keyed by variant, one per seed.
    #[serde(skip)]
    pub logs: BTreeMap<String, Vec<TrainLog>>,
}

pub const ABLATION_CSV_HEADER: &str = "variant,audio_missing,visual_missing,complete";

impl AblationReport {
    pub fn row(&self, variant: MixVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant.name())
    }

    /// Mean test accuracies, one row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.4},{:.4},{:.4}",
                r.variant, r.audio_missing.mean, r.visual_missing.mean, r.complete.mean
            )
            .unwrap();
        }
        out
    }

    /// Writes `ablation.csv`, `ablation.json` and one `{variant}-seed{s}.jsonl` log per run.
    pub fn write(&self, dir: &Path) -> Result<()> {
        binio::write_file(&dir.join("ablation.csv"), self.to_csv().as_bytes())?;
        binio::write_file(&dir.join("ablation.json"), serde_json::to_string_pretty(self)?.as_bytes())?;
        for (variant, logs) in &self.logs {
            for (seed, log) in self.seeds.iter().zip(logs) {
                log.write_jsonl(&dir.join(format!("{variant}-seed{seed}.jsonl")))?;
            }
        }
        Ok(())
    }
}

/// Trains every variant on every prepared seed and evaluates the three whole-stream scenarios.
pub fn run_ablation_on(runs: &[SeedRun], cfg: &ExperimentConfig) -> Result<AblationReport> {
    let mut rows = Vec::new();
    let mut logs = BTreeMap::new();
    for variant in MixVariant::ALL {
        let tc = TrainConfig {
            variant,
            ..cfg.train.clone()
        };
        let mut acc: [Vec<f64>; 3] = Default::default();
        let mut vlogs = Vec::new();
        for run in runs {
            let (store, log) = run.train_mixing(&tc)?;
            for (slot, scenario) in acc.iter_mut().zip(Scenario::WHOLE) {
                slot.push(run.evaluate(&store, &tc, scenario)?.accuracy);
            }
            vlogs.push(log);
        }
        let [a, v, c] = acc;
        rows.push(AblationRow {
            variant: variant.name().into(),
            audio_missing: Summary::new(a),
            visual_missing: Summary::new(v),
            complete: Summary::new(c),
        });
        logs.insert(variant.name().to_string(), vlogs);
    }
    Ok(AblationReport {
        seeds: runs.iter().map(|r| r.seed).collect(),
        data_fingerprints: runs.iter().map(|r| r.data_fingerprint.clone()).collect(),
        missing_rate: cfg.train.missing_rate,
        rows,
        logs,
    })
}

pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationReport> {
    run_ablation_on(&prepare_runs(cfg)?, cfg)
}

/// A swept hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NRetrieve,
    KPurge,
    MissingRate,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::NRetrieve => "n_retrieve",
            SweepParam::KPurge => "k_purge",
            SweepParam::MissingRate => "missing_rate",
        }
    }

    /// What each point of the sweep measures.
    pub fn metric(self) -> &'static str {
        match self {
            SweepParam::MissingRate => "test accuracy with the swept rate of samples missing a stream",
            _ => "mean test accuracy over the audio-missing and visual-missing scenarios",
        }
    }

    fn variants(self) -> Vec<MixVariant> {
        match self {
            SweepParam::MissingRate => vec![MixVariant::FULL, MixVariant::BASELINE],
            _ => vec![MixVariant::FULL],
        }
    }

    fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut tc = base.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Config(format!("{} needs whole numbers, got {v}", self.name())));
            }
            Ok(v as usize)
        };
        match self {
            SweepParam::NRetrieve => tc.purification.n_retrieve = as_count(value)?,
            SweepParam::KPurge => tc.purification.k_purge = as_count(value)?,
            SweepParam::MissingRate => tc.missing_rate = value,
        }
        tc.validate()?;
        Ok(tc)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "n_retrieve" | "n" => Ok(SweepParam::NRetrieve),
            "k_purge" | "k" => Ok(SweepParam::KPurge),
            "missing_rate" | "p" => Ok(SweepParam::MissingRate),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub variant: String,
    pub accuracy: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: String,
    pub metric: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Data fingerprint per seed, shared by every point.
    pub data_fingerprints: Vec<String>,
    /// Published optima of the retrieval count and purification budget.
    pub reference: BTreeMap<String, f64>,
    pub points: Vec<SweepPoint>,
}

pub const SWEEP_CSV_HEADER: &str = "parameter,value,variant,accuracy";

impl SweepReport {
    pub fn accuracy(&self, value: f64, variant: MixVariant) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.value == value && p.variant == variant.name())
            .map(|p| p.accuracy.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_CSV_HEADER}\n");
        for p in &self.points {
            writeln!(out, "{},{},{},{:.4}", self.parameter, p.value, p.variant, p.accuracy.mean).unwrap();
        }
        out
    }

    /// Writes `sweep-{parameter}.csv` and `sweep-{parameter}.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let stem = format!("sweep-{}", self.parameter);
        binio::write_file(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        binio::write_file(
            &dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }
}

pub fn reference_points() -> BTreeMap<String, f64> {
    BTreeMap::from([("n_retrieve".to_string(), 3.0), ("k_purge".to_string(), 5.0)])
}

fn sweep_accuracy(run: &SeedRun, param: SweepParam, tc: &TrainConfig) -> Result<f64> {
    let (store, _) = run.train_mixing(tc)?;
    match param {
        SweepParam::MissingRate => {
            let scenario = Scenario::Rate {
                rate: tc.missing_rate,
                policy: MissingPolicy::Either,
            };
            Ok(run.evaluate(&store, tc, scenario)?.accuracy)
        }
        _ => {
            let a = run.evaluate(&store, tc, Scenario::AudioMissing)?.accuracy;
            let v = run.evaluate(&store, tc, Scenario::VisualMissing)?.accuracy;
            Ok((a + v) / 2.0)
        }
    }
}

/// Retrains the mixing stage for every value of `param` on every prepared seed.
pub fn run_sweep_on(runs: &[SeedRun], cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut points = Vec::new();
    for &value in values {
        for variant in param.variants() {
            let tc = param.apply(
                &TrainConfig {
                    variant,
                    ..cfg.train.clone()
                },
                value,
            )?;
            let per_seed = runs
                .iter()
                .map(|r| sweep_accuracy(r, param, &tc))
                .collect::<Result<Vec<_>>>()?;
            points.push(SweepPoint {
                value,
                variant: variant.name().into(),
                accuracy: Summary::new(per_seed),
            });
        }
    }
    Ok(SweepReport {
        parameter: param.name().into(),
        metric: param.metric().into(),
        values: values.to_vec(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        data_fingerprints: runs.iter().map(|r| r.data_fingerprint.clone()).collect(),
        reference: reference_points(),
        points,
    })
}

pub fn run_sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    run_sweep_on(&prepare_runs(cfg)?, cfg, param, values)
}
