// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::extractor::{Activation, Matrix, StageParams};
use crate::matcher::MAX_FANOUT;
use crate::metrics::Metric;

/// One stage of a chain definition, written as
/// `dense:<out>[:<act>]`, `conv:<kernels>x<width>[:<act>]`, `pool:<size>` or
/// `act:<act>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSpec {
    Dense { out: usize, activation: Activation },
    Convolution { kernels: usize, width: usize, activation: Activation },
    Pooling { size: usize },
    Activation(Activation),
}

impl FromStr for StageSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::InvalidConfig(format!("bad stage descriptor {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| t.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        let act = |i: usize| match parts.get(i) {
            Some(a) => a.parse::<Activation>().map_err(|_| bad()),
            None => Ok(Activation::Linear),
        };
        match parts.as_slice() {
            ["dense", out, ..] if parts.len() <= 3 => Ok(StageSpec::Dense { out: num(out)?, activation: act(2)? }),
            ["conv", shape, ..] if parts.len() <= 3 => {
                let (k, w) = shape.split_once('x').ok_or_else(bad)?;
                Ok(StageSpec::Convolution { kernels: num(k)?, width: num(w)?, activation: act(2)? })
            }
            ["pool", size] => Ok(StageSpec::Pooling { size: num(size)? }),
            ["act", _] => Ok(StageSpec::Activation(act(1)?)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageSpec::Dense { out, activation } => write!(f, "dense:{out}:{}", activation.name()),
            StageSpec::Convolution { kernels, width, activation } => {
                write!(f, "conv:{kernels}x{width}:{}", activation.name())
            }
            StageSpec::Pooling { size } => write!(f, "pool:{size}"),
            StageSpec::Activation(a) => write!(f, "act:{}", a.name()),
        }
    }
}

/// Draws concrete parameters for a chain definition. Square linear dense
/// stages get a random orthogonal matrix, so distances between inputs
/// survive the chain; everything else gets scaled Gaussian weights.
pub fn build_stages<R: Rng>(specs: &[StageSpec], input_dim: usize, rng: &mut R) -> Result<Vec<StageParams>, HarnessError> {
    let mut dim = input_dim;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let stage = match *spec {
            StageSpec::Dense { out, activation } => {
                let weights = if out == dim && activation == Activation::Linear {
                    random_orthogonal(dim, rng)
                } else {
                    gaussian_matrix(out, dim, 1.0 / (dim as f64).sqrt(), rng)
                };
                StageParams::dense(weights, vec![0.0; out], activation)?
            }
            StageSpec::Convolution { kernels, width, activation } => {
                let k = gaussian_matrix(kernels, width, 1.0 / (width as f64).sqrt(), rng);
                StageParams::convolution(k, vec![0.0; kernels], activation)?
            }
            StageSpec::Pooling { size } => StageParams::pooling(size)?,
            StageSpec::Activation(activation) => StageParams::Activation { activation },
        };
        dim = stage.output_dim(dim)?;
        out.push(stage);
    }
    Ok(out)
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(rows, cols, data).expect("sized to fit")
}

/// Gram-Schmidt on a Gaussian matrix; rows come out orthonormal.
fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::new(n, n, rows.concat()).expect("square")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub gallery_size: usize,
    /// Dimension of gallery samples and of the chain input.
    pub template_dim: usize,
    pub fanout: usize,
    pub metric: Metric,
    /// Std of the Gaussian noise added to tampered templates.
    pub noise_sigma: f64,
    pub probe_noise_sigma: f64,
    pub probes_per_identity: usize,
    pub tamper_fraction: f64,
    /// Chain stage descriptors, see [`StageSpec`].
    pub chain: Vec<String>,
    /// Largest rank in the emitted CMC table.
    pub ranks: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            gallery_size: 120,
            template_dim: 16,
            fanout: 50,
            metric: Metric::Euclidean,
            noise_sigma: 3.0,
            probe_noise_sigma: 0.03,
            probes_per_identity: 5,
            tamper_fraction: 1.0,
            chain: vec!["dense:16".into(); 3],
            ranks: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn stage_specs(&self) -> Result<Vec<StageSpec>, HarnessError> {
        self.chain.iter().map(|s| s.parse()).collect()
    }

    /// Smallest pairwise distance the synthetic gallery guarantees.
    pub fn separation_bound(&self) -> f64 {
        10.0 * self.probe_noise_sigma * (self.template_dim as f64).sqrt()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::InvalidConfig(m.into()));
        if self.gallery_size == 0 {
            return fail("gallery_size must be at least 1");
        }
        if self.template_dim == 0 {
            return fail("template_dim must be at least 1");
        }
        if self.fanout == 0 || self.fanout > MAX_FANOUT {
            return Err(HarnessError::InvalidConfig(format!("fanout must be in 1..={MAX_FANOUT}")));
        }
        for (name, s) in [("noise_sigma", self.noise_sigma), ("probe_noise_sigma", self.probe_noise_sigma)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(HarnessError::InvalidConfig(format!("{name} must be finite and non-negative")));
            }
        }
        if self.probes_per_identity == 0 {
            return fail("probes_per_identity must be at least 1");
        }
        if !(self.tamper_fraction > 0.0 && self.tamper_fraction <= 1.0) {
            return fail("tamper_fraction must be in (0, 1]");
        }
        if self.ranks == 0 {
            return fail("ranks must be at least 1");
        }
        if self.chain.is_empty() {
            return fail("chain needs at least one stage");
        }
        self.stage_specs()?;
        Ok(())
    }
}
