//! Retrieval-based multi-label tag prediction over swappable vector
//! datastores, with a temporal-drift evaluation harness.
//!
//! Instead of retraining a classifier as the tag distribution drifts, the
//! engine keeps a datastore of (text embedding, tag) entries, retrieves the
//! K nearest entries for a query, and re-ranks their tags into R
//! predictions. Adapting to a new time period is a datastore swap; honoring
//! a deletion request is a compaction; no model update in either case.
//!
//! The best starting point is the `examples/` directory; each example is a
//! runnable tour of one capability:
//!
//! - `synth_corpus`: generate a drifting synthetic corpus and inspect it
//! - `build_and_query`: embed, build a store, predict tags
//! - `ivf_search`: cluster-pruned approximate search vs. exact search
//! - `swap_and_delete`: live store swap and sample deletion
//! - `temporal_eval`: the three evaluation setups side by side
//! - `ablate_k`: retrieval depth & rerank method grid
//! - `oov_breakdown`: recall split by vocabulary membership
//! - `deletion_sweep`: recall and timing across deletion fractions
//! - `vector_file_roundtrip`: exporting and importing embedding files
//!
//! The same pipeline is scriptable through the thin `tagdrift` binary (see
//! `cli`), which exists for reproducible batch experiments.

pub mod cli;
pub mod corpus;
pub mod datastore;
pub mod embed;
pub mod error;
pub mod eval;
pub mod hash;
pub mod index;
pub mod predict;

pub use error::{Error, Result};
