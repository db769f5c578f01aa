// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Browser bindings: run the comparison experiment, and drive a live
//! deployment through tamper, audit and restore.

use bioledger::extractor::ChainStatus;
use bioledger::harness::{
    enroll, generate_synthetic_gallery, inject_noise_at, run_experiment, tamper_extractor_block, ExperimentConfig,
    HarnessError, IntegrityReport, System,
};
use bioledger::ledger::Ledger;
use bioledger::matcher::ConsensusOutcome;
use bioledger::metrics::Metric;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn js(e: HarnessError) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_metric(metric: &str) -> Result<Metric, JsError> {
    metric.parse().map_err(|e: String| JsError::new(&e))
}

fn config(seed: u64, gallery_size: usize, fanout: usize, metric: &str) -> Result<ExperimentConfig, JsError> {
    let config = ExperimentConfig {
        seed,
        gallery_size,
        fanout,
        metric: parse_metric(metric)?,
        probes_per_identity: 2,
        ..ExperimentConfig::default()
    };
    config.validate().map_err(js)?;
    Ok(config)
}

/// Runs the traditional-versus-proposed comparison and returns the summary
/// JSON, with the tamper noise std overridden.
#[wasm_bindgen(js_name = runExperiment)]
pub fn run_experiment_json(
    seed: u64,
    gallery_size: usize,
    fanout: usize,
    metric: &str,
    noise_sigma: f64,
) -> Result<String, JsError> {
    let mut config = config(seed, gallery_size, fanout, metric)?;
    config.noise_sigma = noise_sigma;
    config.ranks = config.ranks.min(gallery_size);
    config.validate().map_err(js)?;
    Ok(run_experiment(&config).map_err(js)?.summary_json())
}

/// An enrolled deployment kept alive between calls.
#[wasm_bindgen]
pub struct Demo {
    system: System,
    tampers: u64,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, gallery_size: usize, fanout: usize) -> Result<Demo, JsError> {
        let config = config(seed, gallery_size, fanout, "euclidean")?;
        let gallery = generate_synthetic_gallery(&config).map_err(js)?;
        let system = enroll(&gallery, &config, Ledger::default()).map_err(js)?;
        Ok(Demo { system, tampers: 0 })
    }

    /// Tree shape, chain length and gallery labels.
    pub fn layout(&self) -> String {
        let chiefs: Vec<Value> = self
            .system
            .tree
            .chiefs()
            .iter()
            .map(|c| json!(c.leaves.iter().map(|l| l.template.identity.clone()).collect::<Vec<_>>()))
            .collect();
        json!({ "chiefs": chiefs, "blocks": self.system.chain.len() }).to_string()
    }

    #[wasm_bindgen(js_name = tamperLeaf)]
    pub fn tamper_leaf(&mut self, index: usize, sigma: f64) -> Result<(), JsError> {
        self.tampers += 1;
        let seed = self.system.config.seed ^ self.tampers;
        inject_noise_at(&mut self.system.tree, &[index], sigma, seed).map_err(js)
    }

    #[wasm_bindgen(js_name = tamperBlock)]
    pub fn tamper_block(&mut self, index: usize, epsilon: f64) -> Result<(), JsError> {
        tamper_extractor_block(&mut self.system.chain, index, epsilon).map_err(js)
    }

    /// Chain and tree audit, with per-block snapshot and recomputed hashes.
    pub fn audit(&self) -> Result<String, JsError> {
        let report = self.system.audit().map_err(js)?;
        let hashes = self.system.chain.audit_hashes().map_err(|e| JsError::new(&e.to_string()))?;
        let blocks: Vec<Value> = hashes
            .snapshot
            .iter()
            .zip(&hashes.recomputed)
            .map(|(s, r)| json!({ "snapshot": s.short(), "recomputed": r.short(), "changed": s != r }))
            .collect();
        Ok(audit_json(&report, blocks).to_string())
    }

    pub fn restore(&mut self) -> Result<String, JsError> {
        let restored = self.system.restore().map_err(js)?;
        Ok(json!({ "blocks": restored.blocks, "leaves": restored.leaves }).to_string())
    }

    /// Identifies a fresh noisy sample of `label` through the ledger and the tree.
    pub fn identify(&mut self, label: &str, metric: &str) -> Result<String, JsError> {
        let metric = parse_metric(metric)?;
        let raw = self.system.probe_for(label).map_err(js)?;
        let id = self.system.identify(&raw, metric).map_err(js)?;
        let outcomes: Vec<Value> = id
            .outcomes
            .iter()
            .map(|o| {
                json!({
                    "chief": o.chief,
                    "accepted": o.outcome == ConsensusOutcome::Accepted,
                    "identity": o.decided.identity,
                    "score": o.decided.score,
                    "flagged": o.flagged,
                })
            })
            .collect();
        Ok(json!({ "identity": id.identity, "score": id.score, "chiefs": outcomes }).to_string())
    }
}

fn audit_json(report: &IntegrityReport, blocks: Vec<Value>) -> Value {
    let first = match report.chain {
        ChainStatus::Tampered { first_index } => Some(first_index),
        _ => None,
    };
    let leaves: Vec<Value> = report
        .tree
        .tampered
        .iter()
        .zip(&report.tampered_leaves)
        .map(|(loc, (global, identity))| json!({ "chief": loc.chief, "leaf": loc.leaf, "index": global, "identity": identity }))
        .collect();
    json!({
        "intact": report.is_intact(),
        "first_tampered_block": first,
        "blocks": blocks,
        "root_changed": report.tree.root_changed,
        "faulty_chiefs": report.tree.faulty_chiefs,
        "leaves": leaves,
        "lines": report.lines(),
    })
}
