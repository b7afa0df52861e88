//! Retrieval-based recovery of missing audio or visual streams for audio-visual question
//! answering.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: tensors and a tape-based reverse-mode differentiation engine.
//! - [`store`]: the cosine-similarity memory bank and its binary file format.
//! - [`model`]: feature encoders, transformer experts, router and answer decoder.
//! - [`purification`]: noise profiling, text-guided semantics and selective injection
//!   applied to retrieved candidates.
//! - [`training`]: losses, Adam, expert pre-training and frozen-expert mixing.
//! - [`harness`]: synthetic benchmark, missingness simulation, evaluation and experiment
//!   runners.

mod binio;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod purification;
pub mod store;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::{MissingPolicy, Modality, ModalityBundle, QuestionType};
