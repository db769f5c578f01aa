// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Root / chief / leaf template-matching tree.
//!
//! Leaves hold one gallery template each. A chief's hash aggregates its
//! leaves' hashes and the root's aggregates the chiefs', with every parent
//! keeping a copy of its children's enrollment-time digests so a tampered
//! template can be traced from the root down to its leaf.
//!
//! Each root-chief link has a decision key pair whose private seed is split
//! into `2n+1` Shamir shards (threshold `n+2`) for a chief with `n` leaves:
//! the root holds `n` (one of them is its consensus contribution), the chief
//! one, and every leaf one. A chief's decision document is accepted only if
//! every leaf agrees with it, which is what lets the root reconstruct the key.

mod consensus;
mod tree;

pub use consensus::{ConsensusOutcome, DecisionDocument, ShardPool};
pub use tree::{
    build_tree, leaf_hash, node_hash, ChiefBehavior, ChiefBlock, ChiefOutcome, DecisionLink, Identification,
    LeafBehavior, LeafBlock, LeafLocator, MatcherTimings, MatcherTree, TreeAudit, MAX_FANOUT,
};

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::extractor::ExtractorError;
use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("fanout must be in 1..={max}, got {got}")]
    InvalidFanout { got: usize, max: usize },
    #[error("template {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("template {0} has non-finite entries")]
    NonFinite(usize),
    #[error("leaf {leaf} of chief {chief} has no score for this cycle")]
    MissingScores { chief: usize, leaf: usize },
    #[error("archive has no template for leaf {0}")]
    ArchiveMissing(usize),
    #[error("no chief {0}")]
    UnknownChief(usize),
    #[error("handoff cannot be checked: no trusted notary key configured")]
    UntrustedHandoff,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
}
