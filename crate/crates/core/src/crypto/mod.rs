// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Cryptographic primitives shared by the extractor chain, the ledger and
//! the matcher tree.
//!
//! * [`hash`] / [`hash_parts`]: SHA-256 with length-prefixed, tagged input framing.
//! * [`SymmetricKey`]: AES-256-GCM, nonce prepended to the ciphertext.
//! * [`KeyPair`]: one 32-byte seed yielding an X25519 encryption key and an
//!   Ed25519 signing key.
//! * [`Envelope`]: hybrid encryption (symmetric payload, asymmetrically wrapped key).
//! * [`shamir_split`] / [`shamir_reconstruct`]: threshold sharing over GF(2^8).

mod asymmetric;
mod envelope;
mod hash;
mod shamir;
mod symmetric;

pub use asymmetric::{
    asym_decrypt, asym_encrypt, asym_encrypt_many, sign, verify, verify_bytes, KeyPair, PublicKey, Signature,
    MAX_ASYM_PAYLOAD,
};
pub use envelope::Envelope;
pub use hash::{hash, hash_parts, Digest, DIGEST_LEN};
pub use shamir::{shamir_reconstruct, shamir_split, Shard, SharingConfig, MAX_SHARDS};
pub use symmetric::{sym_decrypt, sym_encrypt, SymmetricKey};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authentication failure: ciphertext was tampered with or the key is wrong")]
    AuthenticationFailure,
    #[error("decryption failure: ciphertext is not addressed to this key")]
    DecryptionFailure,
    #[error("payload of {len} bytes exceeds the asymmetric bound of {max} bytes")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("invalid sharing config: {0}")]
    InvalidConfig(String),
    #[error("insufficient shards: have {have}, need {need}")]
    InsufficientShards { have: usize, need: usize },
    #[error("duplicate shard index {0}")]
    DuplicateIndex(u8),
    #[error("malformed shard: {0}")]
    MalformedShard(String),
    #[error("malformed key material")]
    MalformedKey,
}
