//! Syntactic feature extraction from bracketed parse trees and distributional
//! comparison of real vs. generated populations.

mod features;
mod histogram;
mod tree;

pub use features::{
    feature_vector, registry_hash, FeatureVector, FEATURE_NAMES, FEATURE_REGISTRY_VERSION,
};
pub use histogram::{bin_values, compare, jensen_shannon, shared_edges, Histogram, DEFAULT_BINS};
pub use tree::{longest_path, parse_tree_from_bracketed, pp_percentage, ParseTree};

use rayon::prelude::*;

use crate::corpus::SentenceRecord;

/// Parallel feature extraction over a record list.
pub fn feature_vectors(records: &[SentenceRecord]) -> Vec<FeatureVector> {
    records.par_iter().map(feature_vector).collect()
}
