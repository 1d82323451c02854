//! Retrieval-based speculative drafting datastores.
//!
//! Two datastores are provided over the same pre-tokenized corpus:
//!
//! * [`suffix_store`]: chunked token arrays indexed by suffix arrays. Drafting
//!   looks up the longest suffix of the generated text (16 tokens down to 2),
//!   gathers the continuations that follow each match and merges them into a
//!   token tree.
//! * [`crest_store`]: a disk-native hash file mapping a selected subset of
//!   short, frequent n-grams directly to precomputed token trees, giving O(1)
//!   lookups and a size that is controlled by the selection budget.
//!
//! [`ngram_select`] chooses which n-grams to keep, [`token_tree`] builds and
//! verifies drafts, and [`harness`] replays held-out conversations against
//! either store to measure accepted draft length, hit rate and latency.

pub mod corpus;
pub mod crest_store;
mod error;
pub mod fnv;
pub mod harness;
pub mod ngram_select;
pub mod suffix_store;
pub mod synth;
pub mod token_tree;

pub use error::{Error, Result};

/// A single token id.
pub type Token = u32;

/// Default node cap for drafted token trees.
pub const DEFAULT_TREE_CAP: usize = 64;
/// Default cap on matched contexts gathered per search.
pub const DEFAULT_MAX_MATCHES: usize = 5000;
/// Default number of tokens retrieved after each matched context.
pub const DEFAULT_CONTINUATION_LEN: usize = 10;
