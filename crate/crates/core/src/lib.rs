//! Mining entity/citation cooccurrences from scholarly corpora.
//!
//! The crate builds a mapping from published scientific entities to the
//! papers that are cited next to them, ranks those candidate source papers
//! for new mentions, and flags entities whose top-ranked source paper is
//! missing from a document's reference list.
//!
//! Data-parallel stages (index accumulation, forest training, evaluation
//! and per-document checks) run on rayon when the `parallel` feature is
//! enabled and fall back to plain iterators otherwise. See [`par`].

pub mod corpus;
pub mod dmc;
pub mod error;
pub mod eval;
pub mod extract;
pub mod forest;
pub mod fsutil;
pub mod index;
pub mod outlier;
pub mod par;
pub mod provider;
pub mod ranking;
pub mod recommend;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
