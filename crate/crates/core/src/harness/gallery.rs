// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{rng_stream, ExperimentConfig, HarnessError, Stream};
use crate::metrics::euclidean;
use crate::Template;

const MAGIC: &str = "bioledger-gallery";
const VERSION: u32 = 1;
const MAX_REJECTIONS: usize = 100_000;

/// A labelled set of equal-length vectors in a line-oriented text form:
///
/// ```text
/// bioledger-gallery 1 <dim> <count>
/// <label> <x1> <x2> ... <xd>
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryFile {
    pub dim: usize,
    pub records: Vec<Template>,
}

impl GalleryFile {
    pub fn new(dim: usize, records: Vec<Template>) -> Result<Self, HarnessError> {
        let g = GalleryFile { dim, records };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<(), HarnessError> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.dim() != self.dim {
                return Err(HarnessError::Parse { line: i + 2, message: format!("expected {} values, got {}", self.dim, r.dim()) });
            }
            if r.identity.is_empty() || r.identity.contains(char::is_whitespace) {
                return Err(HarnessError::Parse { line: i + 2, message: format!("bad label {:?}", r.identity) });
            }
            if r.vector.iter().any(|x| !x.is_finite()) {
                return Err(HarnessError::Parse { line: i + 2, message: "non-finite value".into() });
            }
            if !seen.insert(r.identity.as_str()) {
                return Err(HarnessError::Parse { line: i + 2, message: format!("duplicate label {}", r.identity) });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION} {} {}\n", self.dim, self.records.len());
        for r in &self.records {
            out.push_str(&r.identity);
            for x in &r.vector {
                // shortest representation that parses back to the same bits
                write!(out, " {x:?}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, message: String| HarnessError::Parse { line: line + 1, message };
        let (_, header) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [magic, version, dim, count] = fields.as_slice() else {
            return Err(err(0, "header must be `bioledger-gallery <version> <dim> <count>`".into()));
        };
        if *magic != MAGIC || version.parse::<u32>().ok() != Some(VERSION) {
            return Err(err(0, format!("unsupported header {header:?}")));
        }
        let dim: usize = dim.parse().map_err(|_| err(0, format!("bad dimension {dim:?}")))?;
        let count: usize = count.parse().map_err(|_| err(0, format!("bad count {count:?}")))?;
        let mut records = Vec::with_capacity(count);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let label = parts.next().expect("line is not blank");
            let vector = parts
                .map(|v| v.parse::<f64>().map_err(|_| err(i, format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            records.push(Template::new(label, vector));
        }
        if records.len() != count {
            return Err(err(0, format!("header promises {count} records, found {}", records.len())));
        }
        GalleryFile::new(dim, records)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Draws `gallery_size` standard-normal cluster centres, redrawing any that
/// land closer than the configured separation bound to an earlier one.
pub fn generate_synthetic_gallery(config: &ExperimentConfig) -> Result<GalleryFile, HarnessError> {
    config.validate()?;
    let mut rng = rng_stream(config.seed, Stream::Gallery);
    let bound = config.separation_bound();
    let width = config.gallery_size.saturating_sub(1).to_string().len().max(4);
    let mut records: Vec<Template> = Vec::with_capacity(config.gallery_size);
    let mut rejections = 0;
    while records.len() < config.gallery_size {
        let v: Vec<f64> = (0..config.template_dim).map(|_| rng.sample(StandardNormal)).collect();
        let far = records.iter().all(|r| euclidean(&r.vector, &v).expect("same dimension") >= bound);
        if far {
            records.push(Template::new(format!("id{:0width$}", records.len()), v));
        } else {
            rejections += 1;
            if rejections > MAX_REJECTIONS {
                return Err(HarnessError::InvalidConfig(format!(
                    "cannot place {} identities {bound} apart in {} dimensions",
                    config.gallery_size, config.template_dim
                )));
            }
        }
    }
    GalleryFile::new(config.template_dim, records)
}
