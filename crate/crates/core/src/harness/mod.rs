//! Synthetic benchmark, missingness simulation, evaluation and experiment runners.

pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod missing;
pub mod synthetic;

pub use dataset::{load_dataset, save_dataset, spec_fingerprint};
pub use eval::{check_checkpoint, dump_embeddings, embeddings, embeddings_csv, evaluate, EmbeddingRow, EvalReport, Fingerprint, Tally};
pub use experiment::{
    build_banks, prepare_runs, prepare_seed, run_ablation, run_ablation_on, run_sweep, run_sweep_on, AblationReport, AblationRow,
    ExperimentConfig, SeedRun, Summary, SweepParam, SweepPoint, SweepReport, ABLATION_CSV_HEADER,
    SWEEP_CSV_HEADER,
};
pub use missing::{simulate_missing, Scenario};
pub use synthetic::{bundles, gen_synthetic, Factors, QuestionMix, Sample, SyntheticData, SyntheticSpec};

use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    crate::numerics::hex_digest(Sha256::digest(bytes).as_slice())
}
