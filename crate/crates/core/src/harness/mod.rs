// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment driver: synthetic galleries, enrollment, tamper injection,
//! traditional-versus-proposed evaluation, audits and report emission.
//!
//! Every output is a function of the configuration and its seed. Each use of
//! randomness draws from its own ChaCha stream of that seed, so adding
//! probes never changes the keys and vice versa.

mod config;
mod experiment;
mod gallery;
mod state;

pub use config::{build_stages, ExperimentConfig, StageSpec};
pub use experiment::{
    enroll, generate_probes, global_indices, inject_noise_at, inject_template_noise, run_experiment, run_experiment_on,
    tamper_extractor_block, Architecture, Condition, Evaluation, IntegrityReport, Probe, Report, RestoreSummary,
    System, TemplateStore, Timings,
};
pub use gallery::{generate_synthetic_gallery, GalleryFile};
pub use state::{
    ARCHIVE_FILE, CONFIG_FILE, GALLERY_FILE, LEDGER_FILE, PARAMS_FILE, SNAPSHOT_FILE, TEMPLATES_FILE,
};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::CryptoError;
use crate::extractor::ExtractorError;
use crate::ledger::LedgerError;
use crate::matcher::MatcherError;
use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inconsistent saved state: {0}")]
    State(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Copy, Debug)]
enum Stream {
    Gallery = 1,
    Chain = 2,
    Tree = 3,
    Probes = 4,
    Tamper = 5,
}

fn rng_stream(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
