// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Tamper-evident biometric identification.
//!
//! Feature extraction runs as a hash-chained sequence of blocks routed by a
//! notary over an append-only [`ledger`]; matching runs on a root/chief/leaf
//! tree whose per-chief decisions must gather a threshold of Shamir shards
//! from the leaves before the root accepts them.

pub mod crypto;
pub mod extractor;
pub mod harness;
pub mod ledger;
pub mod matcher;
pub mod metrics;
mod template;

pub use template::Template;
