//! Speculation/negation cue detection and scope resolution framed as token
//! classification.
//!
//! The pipeline runs corpus → word-level task instances → subword tokens →
//! per-token class probabilities → word labels → word-level P/R/F1:
//!
//! * [`corpus`] reads BioScope/SFU inline XML and column-format corpora into
//!   [`corpus::AnnotatedSentence`]s and a JSON Lines interchange format.
//! * [`encoding`] builds cue-label instances (1 normal cue, 2 multiword cue,
//!   3 not a cue) and per-cue scope instances with a marker word before the cue.
//! * [`tokenize`] aligns words to subword tokens, pads, and maps token
//!   probabilities back to words by averaging or by first token.
//! * [`model`] has a small transformer tagger trained with class-weighted
//!   cross entropy, and a replay backend for externally produced probabilities.
//! * [`eval`] scores word-level predictions and aggregates runs.
//! * [`experiment`] splits, trains, predicts and reports end to end.

pub mod corpus;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod model;
pub mod synthetic;
pub mod tokenize;

pub use error::{Error, Result};
pub use exec::Execution;
