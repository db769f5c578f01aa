// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use crate::crypto::Shard;
use crate::ledger::CycleId;
use crate::metrics::Metric;

/// A chief's claim about the best match on its path.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionDocument {
    pub chief_id: usize,
    pub cycle_id: CycleId,
    pub identity: String,
    /// Position of the claimed leaf under its chief.
    pub leaf_index: usize,
    /// Distance; lower is better.
    pub score: f64,
    pub metric: Metric,
}

impl DecisionDocument {
    /// Orders by score, then by leaf position.
    pub(crate) fn beats(&self, score: f64, leaf_index: usize) -> bool {
        self.score < score || (self.score == score && self.leaf_index < leaf_index)
    }
}

/// Shards gathered by a chief for one document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShardPool {
    pub shards: Vec<Shard>,
    /// Number of leaves that consented.
    pub consents: usize,
    /// Positions of leaves that refused and raised their flag.
    pub dissenters: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsensusOutcome {
    Accepted,
    ScrutinyTriggered,
}
