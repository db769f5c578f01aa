// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Feature-extraction chain: each computation stage is a block whose hash
//! covers its parameters and its predecessor's hash, terminated by a notary
//! that routes every step of a query cycle through the ledger.

mod chain;
mod protocol;
mod stage;

pub use chain::{
    compute_block_hash, compute_notary_hash, genesis_digest, ChainStatus, ExtractorBlock, ExtractorChain,
    HashAudit, NotaryBlock, SnapshotBlock, StableSnapshot,
};
pub use protocol::{
    block_handle_update, notary_begin_cycle, notary_handle_update, run_query_cycle, seal_capture, NotaryStep,
    SealedFeature, START_MESSAGE, UNIVERSAL_MESSAGE,
};
pub use stage::{apply_stage, decode_vector, encode_vector, Activation, Matrix, StageParams};

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::ledger::LedgerError;

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid stage: {0}")]
    InvalidStage(String),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("chain has no stages")]
    EmptyChain,
    #[error("no stable snapshot has been taken")]
    NoSnapshot,
    #[error("block index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("integrity check failed at block {first_index}")]
    IntegrityFailure { first_index: usize },
    #[error("entry is not addressed to this block")]
    NotMyTurn,
    #[error("entry signature rejected")]
    SignatureRejected,
    #[error("no block acted on the latest entry")]
    Stalled,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}
