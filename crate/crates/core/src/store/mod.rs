//! Memory bank of `(key embedding, value feature sequence)` pairs with exhaustive cosine
//! retrieval.

mod bank;
mod format;

pub use bank::{build_bank, BankEntry, BankMeta, BankRecord, Candidate, MemoryBank, QuerySpec};
pub use format::{
    decode_bank, encode_bank, load_bank, manifest_path, save_bank, BankManifest, BANK_MAGIC,
    BANK_VERSION,
};
