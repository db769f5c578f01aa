// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Shamir secret sharing over GF(2^8), byte-wise.
//!
//! Each secret byte is the constant term of an independent random polynomial
//! of degree `threshold - 1`; shard `x` carries the evaluations at `x` for
//! every byte. Field arithmetic uses the AES polynomial x^8+x^4+x^3+x+1.

use std::collections::HashSet;

use rand::{CryptoRng, RngCore};

use super::CryptoError;

/// Shard indices are non-zero field elements.
pub const MAX_SHARDS: usize = 255;

const fn build_tables() -> ([u8; 256], [u8; 512]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 512];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        // multiply by the generator 0x03
        x ^= x << 1;
        if x & 0x100 != 0 {
            x ^= 0x11b;
        }
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (log, exp)
}

const TABLES: ([u8; 256], [u8; 512]) = build_tables();
const LOG: [u8; 256] = TABLES.0;
const EXP: [u8; 512] = TABLES.1;

fn gf_mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
}

fn gf_div(a: u8, b: u8) -> u8 {
    debug_assert!(b != 0);
    if a == 0 {
        return 0;
    }
    EXP[LOG[a as usize] as usize + 255 - LOG[b as usize] as usize]
}

/// A single share of a split secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shard {
    pub index: u8,
    pub payload: Vec<u8>,
}

/// Sharing parameters for a chief with `n` leaves: `2n+1` shards, any `n+2`
/// of which reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharingConfig {
    pub n: usize,
    pub total: usize,
    pub threshold: usize,
}

impl SharingConfig {
    pub fn for_leaves(n: usize) -> Result<Self, CryptoError> {
        Self::new(n, 2 * n + 1, n + 2)
    }

    pub fn new(n: usize, total: usize, threshold: usize) -> Result<Self, CryptoError> {
        if n == 0 {
            return Err(CryptoError::InvalidConfig("leaf count must be at least 1".into()));
        }
        if total != 2 * n + 1 {
            return Err(CryptoError::InvalidConfig(format!("total {total} != 2*{n}+1")));
        }
        if threshold != n + 2 {
            return Err(CryptoError::InvalidConfig(format!("threshold {threshold} != {n}+2")));
        }
        if total > MAX_SHARDS {
            return Err(CryptoError::InvalidConfig(format!(
                "{total} shards exceed the field limit of {MAX_SHARDS}"
            )));
        }
        Ok(SharingConfig { n, total, threshold })
    }
}

pub fn shamir_split<R: RngCore + CryptoRng>(
    secret: &[u8],
    config: &SharingConfig,
    rng: &mut R,
) -> Result<Vec<Shard>, CryptoError> {
    let config = SharingConfig::new(config.n, config.total, config.threshold)?;
    if secret.is_empty() {
        return Err(CryptoError::InvalidConfig("secret must be non-empty".into()));
    }
    let mut shards: Vec<Shard> = (1..=config.total)
        .map(|x| Shard { index: x as u8, payload: Vec::with_capacity(secret.len()) })
        .collect();
    let mut coeffs = vec![0u8; config.threshold];
    for &byte in secret {
        coeffs[0] = byte;
        rng.fill_bytes(&mut coeffs[1..]);
        for shard in shards.iter_mut() {
            // Horner, highest degree first
            let y = coeffs.iter().rev().fold(0u8, |acc, &c| gf_mul(acc, shard.index) ^ c);
            shard.payload.push(y);
        }
    }
    Ok(shards)
}

/// Rebuilds the secret from at least `config.threshold` shards. Fewer shards
/// are rejected by count before any interpolation is attempted.
pub fn shamir_reconstruct(shards: &[Shard], config: &SharingConfig) -> Result<Vec<u8>, CryptoError> {
    let mut seen = HashSet::with_capacity(shards.len());
    for shard in shards {
        if shard.index == 0 {
            return Err(CryptoError::MalformedShard("index 0 is reserved for the secret".into()));
        }
        if !seen.insert(shard.index) {
            return Err(CryptoError::DuplicateIndex(shard.index));
        }
    }
    if shards.len() < config.threshold {
        return Err(CryptoError::InsufficientShards { have: shards.len(), need: config.threshold });
    }
    let len = shards[0].payload.len();
    if shards.iter().any(|s| s.payload.len() != len) {
        return Err(CryptoError::MalformedShard("payload lengths differ".into()));
    }

    // Lagrange basis values at x = 0; subtraction is xor in GF(2^8).
    let basis: Vec<u8> = shards
        .iter()
        .map(|si| {
            shards
                .iter()
                .filter(|sj| sj.index != si.index)
                .fold(1u8, |acc, sj| gf_mul(acc, gf_div(sj.index, sj.index ^ si.index)))
        })
        .collect();

    Ok((0..len)
        .map(|b| {
            shards
                .iter()
                .zip(&basis)
                .fold(0u8, |acc, (s, &l)| acc ^ gf_mul(s.payload[b], l))
        })
        .collect())
}
