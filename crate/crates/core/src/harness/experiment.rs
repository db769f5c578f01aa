// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use web_time::Instant;

use super::{build_stages, rng_stream, ExperimentConfig, GalleryFile, HarnessError, Stream};
use crate::crypto::hash_parts;
use crate::extractor::{apply_stage, run_query_cycle, ChainStatus, ExtractorChain};
use crate::ledger::Ledger;
use crate::matcher::{build_tree, Identification, LeafLocator, MatcherTimings, MatcherTree, TreeAudit};
use crate::metrics::{cmc_curve, rank_gallery, rank_k_accuracy, CmcCurve, MatchScore, Metric};
use crate::Template;

/// An enrolled deployment: extractor chain, ledger, matcher tree and the
/// enrollment-time template archive used for restoration.
pub struct System {
    pub config: ExperimentConfig,
    pub gallery: GalleryFile,
    pub chain: ExtractorChain,
    pub ledger: Ledger,
    pub tree: MatcherTree,
    pub archive: Vec<Template>,
    query_rng: ChaCha20Rng,
}

/// Builds the chain from the config, passes every gallery sample through it
/// to get the stored templates, builds the matcher tree and takes the chain's
/// stable snapshot. Everything is a function of the gallery and the config.
pub fn enroll(gallery: &GalleryFile, config: &ExperimentConfig, ledger: Ledger) -> Result<System, HarnessError> {
    config.validate()?;
    if gallery.is_empty() {
        return Err(HarnessError::InvalidConfig("cannot enroll an empty gallery".into()));
    }
    let mut chain_rng = rng_stream(config.seed, Stream::Chain);
    let stages = build_stages(&config.stage_specs()?, gallery.dim, &mut chain_rng)?;
    let archive = gallery
        .records
        .iter()
        .map(|r| {
            let v = stages.iter().try_fold(r.vector.clone(), |x, s| apply_stage(&x, s))?;
            Ok(Template::new(r.identity.clone(), v))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut tree = build_tree(&archive, config.fanout, rng_stream(config.seed, Stream::Tree).next_u64())?;
    let mut chain = ExtractorChain::new(gallery.dim, stages, tree.root_public(), &mut chain_rng)?;
    chain.take_snapshot();
    tree.set_trusted_notary(chain.notary().keys.public());
    let query_rng = query_rng(config.seed, ledger.len());
    Ok(System { config: config.clone(), gallery: gallery.clone(), chain, ledger, tree, archive, query_rng })
}

/// Cycle identifiers come from this generator, so it is keyed by the ledger
/// length to keep them fresh across separate runs on one ledger.
fn query_rng(seed: u64, ledger_len: usize) -> ChaCha20Rng {
    let key = hash_parts(b"bioledger/harness/query", &[&seed.to_be_bytes(), &(ledger_len as u64).to_be_bytes()]);
    ChaCha20Rng::from_seed(*key.as_bytes())
}

/// A probe sample with its ground-truth identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub truth: String,
    pub raw: Vec<f64>,
}

/// Each gallery sample plus Gaussian noise, `probes_per_identity` times.
pub fn generate_probes(gallery: &GalleryFile, config: &ExperimentConfig) -> Vec<Probe> {
    let mut rng = rng_stream(config.seed, Stream::Probes);
    let noise = Normal::new(0.0, config.probe_noise_sigma).expect("sigma validated");
    let mut probes = Vec::with_capacity(gallery.len() * config.probes_per_identity);
    for r in &gallery.records {
        for _ in 0..config.probes_per_identity {
            let raw = r.vector.iter().map(|x| x + noise.sample(&mut rng)).collect();
            probes.push(Probe { truth: r.identity.clone(), raw });
        }
    }
    probes
}

/// Anything holding templates an attacker can overwrite in place.
pub trait TemplateStore {
    fn template_count(&self) -> usize;
    fn template_at_mut(&mut self, index: usize) -> Option<&mut Template>;
}

impl TemplateStore for Vec<Template> {
    fn template_count(&self) -> usize {
        self.len()
    }

    fn template_at_mut(&mut self, index: usize) -> Option<&mut Template> {
        self.get_mut(index)
    }
}

impl TemplateStore for MatcherTree {
    fn template_count(&self) -> usize {
        self.leaf_count()
    }

    fn template_at_mut(&mut self, index: usize) -> Option<&mut Template> {
        self.template_mut(index)
    }
}

/// Adds N(0, sigma²) noise to every entry of `ceil(fraction * len)` randomly
/// chosen templates. Returns the chosen gallery indices, ascending. The same
/// seed picks the same templates and the same noise in any store.
pub fn inject_template_noise<S: TemplateStore + ?Sized>(
    store: &mut S,
    sigma: f64,
    seed: u64,
    fraction: f64,
) -> Result<Vec<usize>, HarnessError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(HarnessError::InvalidConfig("tamper sigma must be positive".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HarnessError::InvalidConfig("tamper fraction must be in (0, 1]".into()));
    }
    let len = store.template_count();
    let count = ((fraction * len as f64).ceil() as usize).clamp(len.min(1), len);
    let mut rng = rng_stream(seed, Stream::Tamper);
    let mut chosen = sample(&mut rng, len, count).into_vec();
    chosen.sort_unstable();
    add_noise(store, &chosen, sigma, &mut rng)?;
    Ok(chosen)
}

/// Adds N(0, sigma²) noise to every entry of the templates at `indices`.
pub fn inject_noise_at<S: TemplateStore + ?Sized>(
    store: &mut S,
    indices: &[usize],
    sigma: f64,
    seed: u64,
) -> Result<(), HarnessError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(HarnessError::InvalidConfig("tamper sigma must be positive".into()));
    }
    add_noise(store, indices, sigma, &mut rng_stream(seed, Stream::Tamper))
}

fn add_noise<S: TemplateStore + ?Sized>(
    store: &mut S,
    indices: &[usize],
    sigma: f64,
    rng: &mut ChaCha20Rng,
) -> Result<(), HarnessError> {
    let noise = Normal::new(0.0, sigma).expect("sigma checked");
    let len = store.template_count();
    if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
        return Err(HarnessError::InvalidConfig(format!("no template {bad}; the gallery has {len}")));
    }
    for &i in indices {
        let t = store.template_at_mut(i).expect("index checked");
        for x in &mut t.vector {
            *x += noise.sample(&mut *rng);
        }
    }
    Ok(())
}

/// Perturbs one parameter of extractor block `index`.
pub fn tamper_extractor_block(chain: &mut ExtractorChain, index: usize, epsilon: f64) -> Result<(), HarnessError> {
    Ok(chain.tamper_block(index, epsilon)?)
}

/// Outcome of checking both halves of a system against their stable state.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrityReport {
    pub chain: ChainStatus,
    pub changed_blocks: Vec<usize>,
    pub tree: TreeAudit,
    /// Gallery index and identity of every tampered leaf.
    pub tampered_leaves: Vec<(usize, String)>,
}

impl IntegrityReport {
    pub fn is_intact(&self) -> bool {
        self.chain == ChainStatus::Intact && self.tree.is_intact()
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.chain {
            ChainStatus::Intact => out.push("chain: intact".to_string()),
            ChainStatus::Tampered { first_index } => {
                out.push(format!("chain: block {first_index} is the first to depart from the stable state"));
                out.push(format!("chain: changed blocks {:?}; restore them from the snapshot", self.changed_blocks));
            }
            ChainStatus::NotaryMismatch => out.push("chain: notary hash differs from the stable state".to_string()),
        }
        if self.tree.is_intact() {
            out.push("tree: intact".to_string());
        } else {
            out.push(format!("tree: root hash changed; faulty chiefs {:?}", self.tree.faulty_chiefs));
            for (loc, (global, identity)) in self.tree.tampered.iter().zip(&self.tampered_leaves) {
                out.push(format!(
                    "tree: leaf {global} ({identity}) under chief {} tampered; restore from the archive",
                    loc.chief
                ));
            }
        }
        out
    }
}

/// What a restore pass put back.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RestoreSummary {
    pub blocks: Vec<usize>,
    pub leaves: Vec<usize>,
}

impl System {
    pub fn audit(&self) -> Result<IntegrityReport, HarnessError> {
        let chain = self.chain.verify_chain()?;
        let changed_blocks = self.chain.audit_hashes()?.changed_blocks();
        let tree = self.tree.verify_tree();
        let tampered_leaves = tree
            .tampered
            .iter()
            .map(|&loc| {
                let global = self.tree.global_index(loc);
                let identity = self.tree.leaf(loc).map(|l| l.template.identity.clone()).unwrap_or_default();
                (global, identity)
            })
            .collect();
        Ok(IntegrityReport { chain, changed_blocks, tree, tampered_leaves })
    }

    /// Restores every tampered block from the snapshot and every tampered
    /// leaf from the archive.
    pub fn restore(&mut self) -> Result<RestoreSummary, HarnessError> {
        let blocks = self.chain.recover()?;
        let tampered = self.tree.verify_tree().tampered;
        self.tree.restore_leaves(&tampered, &self.archive)?;
        let leaves = tampered.iter().map(|&l| self.tree.global_index(l)).collect();
        Ok(RestoreSummary { blocks, leaves })
    }

    /// A fresh noisy sample of gallery identity `label`. The noise depends on
    /// the seed, the label and the ledger length.
    pub fn probe_for(&self, label: &str) -> Result<Vec<f64>, HarnessError> {
        let record = self
            .gallery
            .records
            .iter()
            .find(|r| r.identity == label)
            .ok_or_else(|| HarnessError::InvalidConfig(format!("no gallery identity {label:?}")))?;
        let key = hash_parts(
            b"bioledger/harness/probe",
            &[&self.config.seed.to_be_bytes(), label.as_bytes(), &(self.ledger.len() as u64).to_be_bytes()],
        );
        let mut rng = ChaCha20Rng::from_seed(*key.as_bytes());
        let noise = Normal::new(0.0, self.config.probe_noise_sigma).expect("sigma validated");
        Ok(record.vector.iter().map(|x| x + noise.sample(&mut rng)).collect())
    }

    /// Proposed pipeline: ledger-routed extraction, then the matcher tree.
    pub fn identify(&mut self, raw: &[f64], metric: Metric) -> Result<Identification, HarnessError> {
        let sealed = run_query_cycle(&self.chain, &self.ledger, raw, &mut self.query_rng)?;
        Ok(self.tree.identify(&sealed, metric)?)
    }

    /// Traditional pipeline: plain forward pass and a linear scan over
    /// `flat`, with no integrity checks.
    pub fn identify_traditional(&self, flat: &[Template], raw: &[f64], metric: Metric) -> Result<Vec<MatchScore>, HarnessError> {
        let feature = self.chain.forward(raw)?;
        Ok(rank_gallery(flat, &feature, metric)?)
    }
}

/// Candidate list for a tree decision: the decided identity first, then the
/// remaining candidates in score order.
fn ranked_candidates(id: &Identification) -> Vec<MatchScore> {
    let mut out = Vec::with_capacity(id.candidates.len());
    let mut rest = id.candidates.iter();
    if let Some(pos) = id.candidates.iter().position(|c| c.identity == id.identity) {
        out.push(id.candidates[pos].clone());
        out.extend(id.candidates[..pos].iter().cloned());
        rest = id.candidates[pos + 1..].iter();
    }
    out.extend(rest.cloned());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Traditional,
    Proposed,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Traditional => "traditional",
            Architecture::Proposed => "proposed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    BeforeTamper,
    AfterTamper,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::BeforeTamper => "before_tamper",
            Condition::AfterTamper => "after_tamper",
        }
    }
}

/// Accuracy of one architecture under one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub architecture: Architecture,
    pub condition: Condition,
    pub rank1: f64,
    pub cmc: CmcCurve,
    /// Per-probe candidate lists, in probe order.
    pub results: Vec<Vec<MatchScore>>,
}

/// Wall-clock totals. Kept apart from the accuracy tables, which are
/// reproducible byte for byte.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub matcher: MatcherTimings,
    pub query_cycles: Duration,
    pub traditional: Duration,
    pub proposed_probes: usize,
    pub traditional_probes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub metric: Metric,
    pub seed: u64,
    pub gallery_size: usize,
    pub probe_count: usize,
    pub fanout: usize,
    pub chiefs: usize,
    pub ranks: usize,
    pub truth: Vec<String>,
    pub evaluations: Vec<Evaluation>,
    pub tampered: Vec<usize>,
    pub localized: Vec<usize>,
    pub audit_log: Vec<String>,
    pub timings: Timings,
}

impl Report {
    pub fn evaluation(&self, architecture: Architecture, condition: Condition) -> Option<&Evaluation> {
        self.evaluations.iter().find(|e| e.architecture == architecture && e.condition == condition)
    }

    pub fn rank1(&self, architecture: Architecture, condition: Condition) -> Option<f64> {
        self.evaluation(architecture, condition).map(|e| e.rank1)
    }

    /// Accuracy table, one row per architecture, condition and rank.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tarchitecture\tcondition\trank\taccuracy\n");
        for e in &self.evaluations {
            for (i, acc) in e.cmc.accuracy_at_rank.iter().enumerate() {
                writeln!(out, "{}\t{}\t{}\t{}\t{acc:?}", self.metric, e.architecture.name(), e.condition.name(), i + 1)
                    .expect("writing to a String");
            }
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let evaluations: Vec<serde_json::Value> = self
            .evaluations
            .iter()
            .map(|e| {
                serde_json::json!({
                    "architecture": e.architecture.name(),
                    "condition": e.condition.name(),
                    "rank1": e.rank1,
                    "cmc": e.cmc.accuracy_at_rank,
                })
            })
            .collect();
        let summary = serde_json::json!({
            "metric": self.metric.name(),
            "seed": self.seed,
            "gallery_size": self.gallery_size,
            "probes": self.probe_count,
            "fanout": self.fanout,
            "chiefs": self.chiefs,
            "ranks": self.ranks,
            "evaluations": evaluations,
            "tampered_templates": self.tampered.len(),
            "localized_templates": self.localized.len(),
            "localization_exact": self.tampered == self.localized,
        });
        let mut text = serde_json::to_string_pretty(&summary).expect("json values serialize");
        text.push('\n');
        text
    }

    pub fn timings_tsv(&self) -> String {
        let t = &self.timings;
        let mut out = String::from("term\ttotal_seconds\tprobes\n");
        let m = &t.matcher;
        for (name, d, n) in [
            ("delegate", m.delegate, t.proposed_probes),
            ("match", m.matching, t.proposed_probes),
            ("compare_leaves", m.compare_leaves, t.proposed_probes),
            ("shamir", m.shamir, t.proposed_probes),
            ("compare_chiefs", m.compare_chiefs, t.proposed_probes),
            ("query_cycle", t.query_cycles, t.proposed_probes),
            ("traditional", t.traditional, t.traditional_probes),
        ] {
            writeln!(out, "{name}\t{:.6}\t{n}", d.as_secs_f64()).expect("writing to a String");
        }
        out
    }

    /// Writes `report.tsv`, `summary.json`, `audit.log` and `timings.tsv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.tsv"), self.to_tsv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        std::fs::write(dir.join("audit.log"), self.audit_log.join("\n") + "\n")?;
        std::fs::write(dir.join("timings.tsv"), self.timings_tsv())?;
        Ok(())
    }
}

fn evaluate(
    architecture: Architecture,
    condition: Condition,
    results: Vec<Vec<MatchScore>>,
    truth: &[String],
    ranks: usize,
) -> Result<Evaluation, HarnessError> {
    let rank1 = rank_k_accuracy(&results, truth, 1)?;
    let cmc = cmc_curve(&results, truth, ranks)?;
    Ok(Evaluation { architecture, condition, rank1, cmc, results })
}

fn run_traditional(
    system: &System,
    flat: &[Template],
    probes: &[Probe],
    timings: &mut Timings,
) -> Result<Vec<Vec<MatchScore>>, HarnessError> {
    let start = Instant::now();
    let results = probes
        .iter()
        .map(|p| system.identify_traditional(flat, &p.raw, system.config.metric))
        .collect::<Result<Vec<_>, _>>()?;
    timings.traditional += start.elapsed();
    timings.traditional_probes += probes.len();
    Ok(results)
}

fn run_proposed(system: &mut System, probes: &[Probe], timings: &mut Timings) -> Result<Vec<Vec<MatchScore>>, HarnessError> {
    let metric = system.config.metric;
    let mut results = Vec::with_capacity(probes.len());
    for p in probes {
        let start = Instant::now();
        let sealed = run_query_cycle(&system.chain, &system.ledger, &p.raw, &mut system.query_rng)?;
        timings.query_cycles += start.elapsed();
        let id = system.tree.identify(&sealed, metric)?;
        timings.matcher += id.timings;
        results.push(ranked_candidates(&id));
    }
    timings.proposed_probes += probes.len();
    Ok(results)
}

/// Generates the synthetic gallery for `config` and runs the comparison.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let gallery = super::generate_synthetic_gallery(config)?;
    run_experiment_on(&gallery, config)
}

/// Enrolls `gallery`, evaluates both architectures, tampers every store the
/// same way, evaluates the traditional one as is and the proposed one after
/// its audit and restore.
pub fn run_experiment_on(gallery: &GalleryFile, config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let mut system = enroll(gallery, config, Ledger::in_memory())?;
    let probes = generate_probes(gallery, config);
    let truth: Vec<String> = probes.iter().map(|p| p.truth.clone()).collect();
    let mut timings = Timings::default();
    let mut audit_log = Vec::new();
    let mut evaluations = Vec::with_capacity(4);
    let mut flat = system.archive.clone();

    let results = run_traditional(&system, &flat, &probes, &mut timings)?;
    evaluations.push(evaluate(Architecture::Traditional, Condition::BeforeTamper, results, &truth, config.ranks)?);
    let results = run_proposed(&mut system, &probes, &mut timings)?;
    evaluations.push(evaluate(Architecture::Proposed, Condition::BeforeTamper, results, &truth, config.ranks)?);

    let tamper_seed = rng_stream(config.seed, Stream::Tamper).gen();
    let tampered = if config.noise_sigma > 0.0 {
        let on_flat = inject_template_noise(&mut flat, config.noise_sigma, tamper_seed, config.tamper_fraction)?;
        let on_tree = inject_template_noise(&mut system.tree, config.noise_sigma, tamper_seed, config.tamper_fraction)?;
        debug_assert_eq!(on_flat, on_tree);
        on_tree
    } else {
        Vec::new()
    };
    audit_log.push(format!("tamper: gaussian sigma {} applied to {} templates", config.noise_sigma, tampered.len()));

    let results = run_traditional(&system, &flat, &probes, &mut timings)?;
    evaluations.push(evaluate(Architecture::Traditional, Condition::AfterTamper, results, &truth, config.ranks)?);

    let report = system.audit()?;
    audit_log.extend(report.lines().into_iter().filter(|l| !l.starts_with("tree: leaf")));
    let localized: Vec<usize> = report.tampered_leaves.iter().map(|(g, _)| *g).collect();
    audit_log.push(format!("audit: {} leaves localized, matches injected set: {}", localized.len(), localized == tampered));
    let restored = system.restore()?;
    audit_log.push(format!("restore: {} leaves and {} blocks restored", restored.leaves.len(), restored.blocks.len()));
    audit_log.push(format!("audit after restore: {}", if system.audit()?.is_intact() { "intact" } else { "tampered" }));

    let results = run_proposed(&mut system, &probes, &mut timings)?;
    evaluations.push(evaluate(Architecture::Proposed, Condition::AfterTamper, results, &truth, config.ranks)?);

    Ok(Report {
        metric: config.metric,
        seed: config.seed,
        gallery_size: gallery.len(),
        probe_count: probes.len(),
        fanout: config.fanout,
        chiefs: system.tree.chiefs().len(),
        ranks: config.ranks,
        truth,
        evaluations,
        tampered,
        localized,
        audit_log,
        timings,
    })
}

/// Gallery indices of a locator list, for reporting.
pub fn global_indices(tree: &MatcherTree, locators: &[LeafLocator]) -> Vec<usize> {
    locators.iter().map(|&l| tree.global_index(l)).collect()
}
