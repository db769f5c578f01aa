// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Distance metrics, rank-k accuracy, CMC curves and the flat linear-scan
//! identifier used both as the traditional architecture and as the oracle
//! for the matcher tree.
//!
//! All scores are distances: lower is a better match.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Template;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("no results to evaluate")]
    EmptyResults,
    #[error("rank must be at least 1")]
    InvalidRank,
    #[error("{results} result lists but {truth} truth labels")]
    LengthMismatch { results: usize, truth: usize },
    #[error("empty gallery")]
    EmptyGallery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Cosine => cosine_distance(a, b),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric `{other}` (expected euclidean or cosine)")),
        }
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    let sim = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok(1.0 - sim)
}

/// A candidate identity with its distance to the probe.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchScore {
    pub identity: String,
    pub score: f64,
    pub metric: Metric,
}

/// Scores every gallery entry and sorts ascending by score; equal scores keep
/// gallery order.
pub fn rank_gallery(gallery: &[Template], probe: &[f64], metric: Metric) -> Result<Vec<MatchScore>, MetricError> {
    let mut scored = gallery
        .iter()
        .map(|t| {
            Ok(MatchScore { identity: t.identity.clone(), score: metric.distance(&t.vector, probe)?, metric })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    // stable sort keeps the lowest gallery index first on ties
    scored.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(scored)
}

/// Linear-scan argmin with lowest-index tie-break.
pub fn flat_oracle_identify(gallery: &[Template], probe: &[f64], metric: Metric) -> Result<MatchScore, MetricError> {
    let mut best: Option<MatchScore> = None;
    for t in gallery {
        let score = metric.distance(&t.vector, probe)?;
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(MatchScore { identity: t.identity.clone(), score, metric });
        }
    }
    best.ok_or(MetricError::EmptyGallery)
}

/// Fraction of probes whose true identity is among the first `k` candidates.
pub fn rank_k_accuracy(results: &[Vec<MatchScore>], truth: &[String], k: usize) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::EmptyResults);
    }
    if k == 0 {
        return Err(MetricError::InvalidRank);
    }
    if results.len() != truth.len() {
        return Err(MetricError::LengthMismatch { results: results.len(), truth: truth.len() });
    }
    let hits = results
        .iter()
        .zip(truth)
        .filter(|(cands, t)| cands.iter().take(k).any(|c| &c.identity == *t))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Cumulative match characteristic for ranks `1..=max_rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct CmcCurve {
    pub accuracy_at_rank: Vec<f64>,
}

impl CmcCurve {
    pub fn max_rank(&self) -> usize {
        self.accuracy_at_rank.len()
    }

    /// Accuracy at 1-based `rank`.
    pub fn at(&self, rank: usize) -> Option<f64> {
        rank.checked_sub(1).and_then(|i| self.accuracy_at_rank.get(i).copied())
    }

    pub fn is_monotone(&self) -> bool {
        self.accuracy_at_rank.windows(2).all(|w| w[0] <= w[1])
    }
}

pub fn cmc_curve(results: &[Vec<MatchScore>], truth: &[String], max_rank: usize) -> Result<CmcCurve, MetricError> {
    if max_rank == 0 {
        return Err(MetricError::InvalidRank);
    }
    if results.is_empty() {
        return Err(MetricError::EmptyResults);
    }
    if results.len() != truth.len() {
        return Err(MetricError::LengthMismatch { results: results.len(), truth: truth.len() });
    }
    // first rank at which each probe's truth appears, then a prefix sum
    let mut hits_at = vec![0usize; max_rank];
    for (cands, t) in results.iter().zip(truth) {
        if let Some(pos) = cands.iter().take(max_rank).position(|c| &c.identity == t) {
            hits_at[pos] += 1;
        }
    }
    let total = results.len() as f64;
    let mut acc = 0usize;
    let accuracy_at_rank = hits_at
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / total
        })
        .collect();
    Ok(CmcCurve { accuracy_at_rank })
}
