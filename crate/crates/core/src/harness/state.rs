// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use super::experiment::{enroll, System};
use super::{ExperimentConfig, GalleryFile, HarnessError};
use crate::extractor::{StableSnapshot, StageParams};
use crate::ledger::Ledger;

pub const CONFIG_FILE: &str = "config.toml";
pub const GALLERY_FILE: &str = "gallery.txt";
pub const ARCHIVE_FILE: &str = "archive.txt";
pub const TEMPLATES_FILE: &str = "templates.txt";
pub const PARAMS_FILE: &str = "params.bin";
pub const SNAPSHOT_FILE: &str = "snapshot.bin";
pub const LEDGER_FILE: &str = "ledger.bin";

impl System {
    /// Enrolls into `dir` with a file-backed ledger and saves the result.
    pub fn create_in(dir: impl AsRef<Path>, gallery: &GalleryFile, config: &ExperimentConfig) -> Result<System, HarnessError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let system = enroll(gallery, config, Ledger::create(dir.join(LEDGER_FILE))?)?;
        std::fs::write(dir.join(CONFIG_FILE), config.to_toml())?;
        gallery.write(dir.join(GALLERY_FILE))?;
        GalleryFile::new(system.tree.dim(), system.archive.clone())?.write(dir.join(ARCHIVE_FILE))?;
        std::fs::write(dir.join(SNAPSHOT_FILE), system.chain.snapshot().expect("taken at enrollment").encode())?;
        system.save(dir)?;
        Ok(system)
    }

    /// Writes the mutable state: live templates and live stage parameters.
    /// The archive and the snapshot are written once, at enrollment.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let dir = dir.as_ref();
        let live = GalleryFile { dim: self.tree.dim(), records: self.tree.templates().cloned().collect() };
        std::fs::write(dir.join(TEMPLATES_FILE), live.to_text())?;
        let mut params = Vec::new();
        for b in self.chain.blocks() {
            let bytes = b.params.canonical_bytes();
            params.extend((bytes.len() as u32).to_be_bytes());
            params.extend(bytes);
        }
        std::fs::write(dir.join(PARAMS_FILE), params)?;
        Ok(())
    }

    /// Rebuilds a saved system. Keys are regenerated from the seed; live
    /// parameters and templates are then loaded over the enrolled ones
    /// without touching any stored hash.
    pub fn load(dir: impl AsRef<Path>) -> Result<System, HarnessError> {
        let dir = dir.as_ref();
        let config = ExperimentConfig::load(dir.join(CONFIG_FILE))?;
        let gallery = GalleryFile::read(dir.join(GALLERY_FILE))?;
        let ledger = Ledger::open(dir.join(LEDGER_FILE))?;
        let mut system = enroll(&gallery, &config, ledger)?;

        let archive = GalleryFile::read(dir.join(ARCHIVE_FILE))?;
        if archive.records.len() != system.archive.len() {
            return Err(HarnessError::State("archive size differs from the gallery".into()));
        }
        system.archive = archive.records;

        let snapshot = StableSnapshot::decode(&std::fs::read(dir.join(SNAPSHOT_FILE))?)?;
        system.chain.set_snapshot(snapshot);

        let bytes = std::fs::read(dir.join(PARAMS_FILE))?;
        let mut rest = bytes.as_slice();
        for index in 0..system.chain.len() {
            let (len, tail) = rest.split_first_chunk::<4>().ok_or_else(|| truncated(PARAMS_FILE))?;
            let len = u32::from_be_bytes(*len) as usize;
            if tail.len() < len {
                return Err(truncated(PARAMS_FILE));
            }
            let params = StageParams::from_canonical_bytes(&tail[..len])?;
            system.chain.block_mut(index).expect("index below len").params = params;
            rest = &tail[len..];
        }
        if !rest.is_empty() {
            return Err(HarnessError::State(format!("{PARAMS_FILE} has trailing bytes")));
        }

        let live = GalleryFile::read(dir.join(TEMPLATES_FILE))?;
        if live.records.len() != system.tree.leaf_count() {
            return Err(HarnessError::State("live template count differs from the tree".into()));
        }
        for (i, t) in live.records.into_iter().enumerate() {
            *system.tree.template_mut(i).expect("index below leaf count") = t;
        }
        Ok(system)
    }
}

fn truncated(file: &str) -> HarnessError {
    HarnessError::State(format!("{file} is truncated"))
}
