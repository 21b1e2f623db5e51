//! Opinion-based entity ranking.
//!
//! Given a corpus of per-entity reviews and a user query expressing aspect
//! preferences, this crate ranks entities by how well their review opinions
//! match the query:
//!
//! 1. [`text`] finds opinion words (adjectives, their adverb modifiers and
//!    negators) with a lexicon-driven tagger.
//! 2. [`fuzzy`] turns each opinion word pair into an orientation plus a crisp
//!    strength on a five-level scale via Mamdani inference and centroid
//!    defuzzification.
//! 3. [`crf`] extracts the aspects those opinions target with a trainable
//!    linear-chain conditional random field over BIO labels.
//! 4. [`profile`] pairs aspects with opinions and aggregates them into
//!    per-entity aspect profiles.
//! 5. [`rank`] matches profiles against the query with a three-tier scheme
//!    (aspect+orientation+strength > aspect+orientation > aspect) and orders
//!    entities within tiers by BM25.
//! 6. [`corpus`] handles ingestion, index construction and persistence;
//!    [`eval`] scores ranked output against relevance judgments.
//!
//! The `opinionrank` binary (see [`cli`]) wires these into `train-crf`,
//! `index`, `query` and `eval` subcommands.

pub mod cli;
pub mod corpus;
pub mod crf;
pub mod eval;
pub mod fuzzy;
pub mod profile;
pub mod rank;
pub mod text;

pub use corpus::{build_index, ingest, load_index, save_index, CorpusRecord, Index};
pub use crf::{CrfModel, Hyperparams, Label};
pub use fuzzy::{FuzzyConfig, Granularity, Orientation, SentimentAssessment};
pub use profile::{AspectOpinion, EntityProfile, Review};
pub use rank::{parse_query, rank, Bm25Params, Query, RankedResult, Tier, TierMode};
pub use text::{tokenize, OpinionLexicon, OpinionUnit, PosClass, TaggedToken, Token};
