//! `mrecall`: generate synthetic data, build memory banks, train, evaluate and run
//! ablations or sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modality_recall::harness::{
    bundles, check_checkpoint, dump_embeddings, evaluate, gen_synthetic, load_dataset, run_ablation, run_sweep,
    save_dataset, spec_fingerprint, ExperimentConfig, Fingerprint, Scenario, SweepParam, SyntheticData,
};
use modality_recall::model::checkpoint::{load_model, save_model, CheckpointMeta};
use modality_recall::model::Model;
use modality_recall::numerics::ParamStore;
use modality_recall::store::{build_bank, load_bank, save_bank, MemoryBank, QuerySpec};
use modality_recall::training::{stage1_pretrain, stage2_mix, Banks, MixVariant, TrainConfig};
use modality_recall::{Error, MissingPolicy, Modality, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "mrecall", version, about = "Missing-modality recovery for audio-visual question answering")]
struct Cli {
    /// Experiment configuration (JSON); omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen,
    /// Build, query or inspect memory banks.
    #[command(subcommand)]
    Bank(BankCmd),
    /// Train the experts or the mixing stage.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Evaluate a checkpoint and write an evaluation report.
    Eval(EvalArgs),
    /// Train and evaluate all four recovery variants over several seeds.
    Ablate,
    /// Sweep one hyperparameter over several seeds.
    Sweep {
        /// n_retrieve, k_purge or missing_rate.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Write pooled joint representations with labels as CSV.
    DumpEmb(EvalArgs),
}

#[derive(Subcommand)]
enum BankCmd {
    /// Build a bank from the training split of a dataset.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        modality: String,
    },
    /// Print the entries closest to (or farthest from) a sample's key.
    Query {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample whose key is the query.
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        bottom: bool,
        /// Leave the sample's own entry out.
        #[arg(long)]
        exclude_self: bool,
    },
    /// Print a bank's header and checksum.
    Info {
        #[arg(long)]
        bank: PathBuf,
    },
}

#[derive(Args)]
struct BankArgs {
    /// Audio bank file; built from the training split when omitted.
    #[arg(long)]
    audio_bank: Option<PathBuf>,
    /// Visual bank file; built from the training split when omitted.
    #[arg(long)]
    visual_bank: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Pre-train encoders, experts and decoder on complete samples.
    Stage1 {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train router, decoder and purification with frozen experts.
    Stage2 {
        #[arg(long)]
        data: PathBuf,
        /// Stage-I checkpoint directory.
        #[arg(long)]
        init: PathBuf,
        /// baseline, cap, cmr or cmr+cap.
        #[arg(long, default_value = "cmr+cap")]
        variant: String,
        #[command(flatten)]
        banks: BankArgs,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    /// Defaults to the variant the checkpoint was trained with.
    #[arg(long)]
    variant: Option<String>,
    /// audio-missing, visual-missing or complete; ignored when --rate is given.
    #[arg(long, default_value = "complete")]
    scenario: String,
    /// Remove a stream from this fraction of samples instead of a whole-stream scenario.
    #[arg(long)]
    rate: Option<f64>,
    /// audio, visual or either; used with --rate.
    #[arg(long, default_value = "either")]
    policy: String,
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    banks: BankArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let raw = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Data(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn parse_modality(s: &str) -> Result<Modality> {
    match s {
        "audio" => Ok(Modality::Audio),
        "visual" => Ok(Modality::Visual),
        other => Err(Error::Config(format!("banks hold audio or visual features, not {other:?}"))),
    }
}

fn load_checkpoint_dir(dir: &Path) -> Result<(CheckpointMeta, ParamStore)> {
    load_model(dir).map_err(|e| match e {
        Error::Checkpoint(_) => e,
        other => Error::Checkpoint(format!("{}: {other}", dir.display())),
    })
}

fn banks_for(data: &SyntheticData, args: &BankArgs) -> Result<Banks> {
    let bank = |m: Modality, path: &Option<PathBuf>| -> Result<MemoryBank> {
        let bank = match path {
            Some(p) => load_bank(p)?,
            None => build_bank(data.bank_records(m)?, m, "train split")?,
        };
        if bank.modality() != m {
            return Err(Error::Modality(format!("expected a {m} bank, found {}", bank.modality())));
        }
        Ok(bank)
    };
    Ok(Banks {
        audio: Some(bank(Modality::Audio, &args.audio_bank)?),
        visual: Some(bank(Modality::Visual, &args.visual_bank)?),
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen => {
            if let Some(s) = cli.seed {
                cfg.data.seed = s;
            }
            let data = gen_synthetic(&cfg.data)?;
            let out = out_path(&cli)?;
            save_dataset(&data, out)?;
            println!(
                "wrote {} train / {} val / {} test samples to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Bank(cmd) => bank_command(&cli, cmd)?,
        Command::Train(cmd) => train_command(&cli, &mut cfg, cmd)?,
        Command::Eval(args) => {
            let (ctx, test) = eval_setup(&cli, &cfg, args)?;
            let fp = Fingerprint::new(ctx.data_seed, ctx.data_fp.clone(), &cfg, ctx.store.checksum(""))?;
            let report = evaluate(
                &ctx.model,
                &ctx.store,
                &ctx.banks,
                &test,
                ctx.variant,
                &cfg.train.purification,
                &ctx.scenario,
                fp,
            )?;
            let json = serde_json::to_string_pretty(&report)?;
            match &cli.out {
                Some(p) => write_text(p, &json)?,
                None => println!("{json}"),
            }
            eprintln!("{} {}: accuracy {:.4} on {} samples", report.variant, report.scenario, report.accuracy, report.count);
        }
        Command::Ablate => {
            if let Some(s) = cli.seed {
                cfg.base_seed = s;
            }
            let out = out_path(&cli)?;
            let report = run_ablation(&cfg)?;
            report.write(out)?;
            print!("{}", report.to_csv());
        }
        Command::Sweep { param, values } => {
            if let Some(s) = cli.seed {
                cfg.base_seed = s;
            }
            let param: SweepParam = param.parse()?;
            let out = out_path(&cli)?;
            let report = run_sweep(&cfg, param, values)?;
            report.write(out)?;
            print!("{}", report.to_csv());
        }
        Command::DumpEmb(args) => {
            let (ctx, samples) = eval_setup(&cli, &cfg, args)?;
            let out = out_path(&cli)?;
            let n = dump_embeddings(
                &ctx.model,
                &ctx.store,
                &ctx.banks,
                &samples,
                ctx.variant,
                &cfg.train.purification,
                out,
            )?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn bank_command(cli: &Cli, cmd: &BankCmd) -> Result<()> {
    match cmd {
        BankCmd::Build { data, modality } => {
            let m = parse_modality(modality)?;
            let ds = load_dataset(data)?;
            let bank = build_bank(ds.bank_records(m)?, m, format!("{} train split", data.display()))?;
            let out = out_path(cli)?;
            save_bank(&bank, out)?;
            println!("wrote {} {m} entries to {}", bank.len(), out.display());
        }
        BankCmd::Query {
            bank,
            data,
            id,
            n,
            bottom,
            exclude_self,
        } => {
            let b = load_bank(bank)?;
            let ds = load_dataset(data)?;
            let sample = ["train", "val", "test"]
                .iter()
                .flat_map(|s| ds.split(s).unwrap_or(&[]))
                .find(|s| &s.bundle.id == id)
                .ok_or_else(|| Error::Data(format!("no sample {id:?} in {}", data.display())))?;
            let mut spec = QuerySpec::new(sample.bundle.key.clone(), *n);
            if *exclude_self {
                spec = spec.excluding(id.clone());
            }
            let found = if *bottom { b.query_bottomn(&spec)? } else { b.query_topn(&spec)? };
            let rows: Vec<_> = found
                .iter()
                .map(|c| serde_json::json!({"index": c.index, "id": c.id, "score": c.score}))
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
        BankCmd::Info { bank } => {
            let b = load_bank(bank)?;
            let [len, dim] = b.value_shape();
            let info = serde_json::json!({
                "modality": b.modality().name(),
                "count": b.len(),
                "key_dim": b.key_dim(),
                "value_len": len,
                "value_dim": dim,
                "checksum": format!("{:08x}", b.meta().checksum),
                "source": b.meta().source,
            });
            println!("{}", serde_json::to_string_pretty(&info)?);
        }
    }
    Ok(())
}

fn train_command(cli: &Cli, cfg: &mut ExperimentConfig, cmd: &TrainCmd) -> Result<()> {
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    let out = out_path(cli)?;
    match cmd {
        TrainCmd::Stage1 { data } => {
            let ds = load_dataset(data)?;
            let model = Model::new(cfg.model_config(&ds.spec))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let mut store = model.init_params(&mut rng);
            let log = stage1_pretrain(&model, &mut store, &bundles(&ds.train), &bundles(&ds.val), &cfg.train)?;
            let meta = CheckpointMeta {
                config: model.config.clone(),
                params_sha256: store.checksum(""),
                stage: "stage1".into(),
                variant: None,
                seed: cfg.train.seed,
                data_fingerprint: spec_fingerprint(&ds.spec)?,
            };
            save_model(out, &meta, &store)?;
            log.write_jsonl(&out.join("train-log.jsonl"))?;
            report_log(&log);
        }
        TrainCmd::Stage2 {
            data,
            init,
            variant,
            banks,
        } => {
            let ds = load_dataset(data)?;
            let variant = MixVariant::from_name(variant)?;
            let (meta, mut store) = load_checkpoint_dir(init)?;
            let fp = spec_fingerprint(&ds.spec)?;
            check_checkpoint(&meta, &fp, &cfg.model_config(&ds.spec))?;
            let model = Model::new(meta.config.clone())?;
            let banks = banks_for(&ds, banks)?;
            let tc = TrainConfig {
                variant,
                ..cfg.train.clone()
            };
            let val = Scenario::Rate {
                rate: tc.missing_rate,
                policy: tc.policy,
            }
            .apply(&bundles(&ds.val), tc.seed)?;
            let log = stage2_mix(&model, &mut store, &bundles(&ds.train), &banks, &val, &tc)?;
            let meta = CheckpointMeta {
                params_sha256: store.checksum(""),
                stage: "stage2".into(),
                variant: Some(variant.name().into()),
                seed: tc.seed,
                ..meta
            };
            save_model(out, &meta, &store)?;
            log.write_jsonl(&out.join("train-log.jsonl"))?;
            report_log(&log);
        }
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn report_log(log: &modality_recall::training::TrainLog) {
    for r in &log.records {
        let acc = r.accuracy.map_or(String::from("-"), |a| format!("{a:.4}"));
        eprintln!("{} epoch {:3} loss {:.4} acc {acc}", r.stage, r.epoch, r.total_loss);
    }
}

struct EvalContext {
    model: Model,
    store: ParamStore,
    banks: Banks,
    variant: MixVariant,
    scenario: String,
    data_seed: u64,
    data_fp: String,
}

fn eval_setup(
    cli: &Cli,
    cfg: &ExperimentConfig,
    args: &EvalArgs,
) -> Result<(EvalContext, Vec<modality_recall::ModalityBundle>)> {
    let ds = load_dataset(&args.data)?;
    let (meta, store) = load_checkpoint_dir(&args.model)?;
    let data_fp = spec_fingerprint(&ds.spec)?;
    check_checkpoint(&meta, &data_fp, &cfg.model_config(&ds.spec))?;
    let variant = match (&args.variant, &meta.variant) {
        (Some(v), _) | (None, Some(v)) => MixVariant::from_name(v)?,
        (None, None) => MixVariant::FULL,
    };
    let seed = cli.seed.unwrap_or(cfg.train.seed);
    let scenario = match args.rate {
        Some(rate) => Scenario::Rate {
            rate,
            policy: args.policy.parse::<MissingPolicy>()?,
        },
        None => args.scenario.parse()?,
    };
    let samples = scenario.apply(&bundles(ds.split(&args.split)?), seed)?;
    let banks = banks_for(&ds, &args.banks)?;
    Ok((
        EvalContext {
            model: Model::new(meta.config)?,
            store,
            banks,
            variant,
            scenario: scenario.name(),
            data_seed: ds.spec.seed,
            data_fp,
        },
        samples,
    ))
}
