// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criteria run one after another so the timing
//! measurements do not compete for the CPU.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bioledger::crypto::{
    asym_decrypt, asym_encrypt, shamir_reconstruct, shamir_split, sign, sym_encrypt, CryptoError, Envelope,
    KeyPair, PublicKey, SharingConfig, SymmetricKey,
};
use bioledger::extractor::{
    apply_stage, block_handle_update, encode_vector, notary_handle_update, run_query_cycle, Activation, ChainStatus,
    ExtractorChain, ExtractorError, SealedFeature, START_MESSAGE, UNIVERSAL_MESSAGE,
};
use bioledger::harness::{
    build_stages, run_experiment, Architecture, Condition, ExperimentConfig, Report, StageSpec,
};
use bioledger::ledger::{CycleId, EntryDraft, Ledger};
use bioledger::matcher::{
    build_tree, ChiefBehavior, ConsensusOutcome, DecisionDocument, Identification, LeafBehavior, LeafLocator,
    MatcherTree,
};
use bioledger::metrics::{flat_oracle_identify, rank_k_accuracy, Metric};
use bioledger::Template;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn gaussian(rng: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_gallery(rng: &mut ChaCha20Rng, n: usize, d: usize) -> Vec<Template> {
    (0..n).map(|i| Template::new(format!("g{i:03}"), gaussian(rng, d))).collect()
}

/// Reported numbers of every experiment run, kept for the CMC check.
struct Runs(Vec<(String, Report)>);

fn tamper_retention(runs: &mut Runs) -> Outcome {
    let config = ExperimentConfig::default();
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    let r = |a, c| report.rank1(a, c).expect("all four evaluations present");
    let trad_before = r(Architecture::Traditional, Condition::BeforeTamper);
    let trad_after = r(Architecture::Traditional, Condition::AfterTamper);
    let prop_before = r(Architecture::Proposed, Condition::BeforeTamper);
    let prop_after = r(Architecture::Proposed, Condition::AfterTamper);
    ensure!(trad_before == prop_before, "before tampering traditional {trad_before} != proposed {prop_before}");
    ensure!(
        prop_after.to_bits() == prop_before.to_bits(),
        "proposed rank-1 moved from {prop_before} to {prop_after}"
    );
    let before = report.evaluation(Architecture::Proposed, Condition::BeforeTamper).unwrap();
    let after = report.evaluation(Architecture::Proposed, Condition::AfterTamper).unwrap();
    ensure!(before.cmc == after.cmc, "proposed CMC changed after tampering");
    ensure!(trad_before - trad_after >= 0.5, "traditional rank-1 dropped only {trad_before} -> {trad_after}");
    ensure!(report.tampered == report.localized, "localized set differs from the injected set");
    let detail = format!(
        "traditional {trad_before:.4} -> {trad_after:.4}, proposed {prop_before:.4} -> {prop_after:.4} ({} probes)",
        report.probe_count
    );
    runs.0.push(("default".into(), report));
    Ok(detail)
}

fn single_chief(rng: &mut ChaCha20Rng, n: usize) -> MatcherTree {
    build_tree(&random_gallery(rng, n, 8), n, rng.gen()).expect("valid tree")
}

/// Every way a chief could misreport its path, given the true scores.
fn forgeries(rng: &mut ChaCha20Rng, honest: &DecisionDocument, tree: &MatcherTree) -> Vec<DecisionDocument> {
    let leaves = &tree.chiefs()[0].leaves;
    let score = |i: usize| leaves[i].last_score.expect("scored").1;
    let mut out = Vec::new();
    // a worse leaf with its true score
    let worse: Vec<usize> = (0..leaves.len()).filter(|&i| score(i) > honest.score).collect();
    if let Some(&i) = worse.choose(rng) {
        out.push(DecisionDocument {
            identity: leaves[i].template.identity.clone(),
            leaf_index: i,
            score: score(i),
            ..honest.clone()
        });
    }
    // the right leaf with an inflated or an understated score
    let delta = rng.gen_range(1e-9..1.0);
    out.push(DecisionDocument { score: honest.score + delta, ..honest.clone() });
    out.push(DecisionDocument { score: honest.score - delta, ..honest.clone() });
    // a worse leaf credited with the best score
    if let Some(&i) = worse.choose(rng) {
        out.push(DecisionDocument {
            identity: leaves[i].template.identity.clone(),
            leaf_index: i,
            ..honest.clone()
        });
    }
    // an identity that is not on the path
    out.push(DecisionDocument { identity: "intruder".into(), leaf_index: leaves.len(), score: 0.0, ..honest.clone() });
    // the right claim for a stale cycle
    out.push(DecisionDocument { cycle_id: CycleId(rng.gen()), ..honest.clone() });
    out
}

fn consensus_soundness() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let (mut forged_total, mut forged_accepted, mut honest_total, mut honest_accepted) = (0, 0, 0, 0);
    let mut padded_accepted = 0;
    let mut wrong_after_scrutiny = 0;
    for n in [1usize, 5, 50] {
        let mut tree = single_chief(&mut rng, n);
        let rounds = 400;
        for _ in 0..rounds {
            let probe = gaussian(&mut rng, 8);
            let id = tree.identify_probe(&probe, Metric::Euclidean).map_err(|e| e.to_string())?;
            let cycle = id.outcomes[0].submitted.cycle_id;
            let honest = tree.chiefs()[0].draft_document(0, cycle, Metric::Euclidean).map_err(|e| e.to_string())?;

            let pool = tree.chief_mut(0).unwrap().collect_consent(&honest);
            honest_total += 1;
            if tree.root_finalize(0, &honest, &pool) == ConsensusOutcome::Accepted {
                honest_accepted += 1;
            }

            for forged in forgeries(&mut rng, &honest, &tree) {
                let mut pool = tree.chief_mut(0).unwrap().collect_consent(&forged);
                forged_total += 1;
                if tree.root_finalize(0, &forged, &pool) == ConsensusOutcome::Accepted {
                    forged_accepted += 1;
                }
                // a chief that makes up the missing shards fares no better
                let config = tree.links()[0].config;
                let len = pool.shards.first().map_or(32, |s| s.payload.len());
                let mut index = 1u8;
                while pool.shards.len() + 1 < config.threshold {
                    if pool.shards.iter().all(|s| s.index != index) {
                        let payload = (0..len).map(|_| rng.gen()).collect();
                        pool.shards.push(bioledger::crypto::Shard { index, payload });
                    }
                    index += 1;
                }
                if tree.root_finalize(0, &forged, &pool) == ConsensusOutcome::Accepted {
                    padded_accepted += 1;
                }
                let decided = tree.root_scrutinize(0, cycle, &forged).map_err(|e| e.to_string())?;
                if decided.identity != honest.identity || decided.score != honest.score {
                    wrong_after_scrutiny += 1;
                }
            }
        }
    }
    ensure!(forged_total >= 1000, "only {forged_total} forged documents");
    ensure!(honest_total >= 1000, "only {honest_total} honest documents");
    ensure!(forged_accepted == 0, "{forged_accepted} forged documents reached consensus");
    ensure!(padded_accepted == 0, "{padded_accepted} padded pools reached consensus");
    ensure!(honest_accepted == honest_total, "{honest_accepted}/{honest_total} honest documents accepted");
    ensure!(wrong_after_scrutiny == 0, "scrutiny picked the wrong leaf {wrong_after_scrutiny} times");
    Ok(format!("{forged_total} forged (0 accepted, padded or not), {honest_accepted}/{honest_total} honest accepted"))
}

fn shamir_sharpness() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut checked = 0;
    for n in 1..=4usize {
        let config = SharingConfig::for_leaves(n).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let secret: Vec<u8> = (0..32).map(|_| rng.gen()).collect();
            let shards = shamir_split(&secret, &config, &mut rng).map_err(|e| e.to_string())?;
            ensure!(shards.len() == 2 * n + 1, "n={n}: {} shards", shards.len());
            for mask in 0u32..(1 << shards.len()) {
                let subset: Vec<_> =
                    shards.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, s)| s.clone()).collect();
                let got = shamir_reconstruct(&subset, &config);
                if subset.len() == n + 2 {
                    ensure!(got.as_deref() == Ok(secret.as_slice()), "n={n} mask {mask:b}: wrong secret");
                    checked += 1;
                } else if subset.len() <= n + 1 {
                    ensure!(
                        got == Err(CryptoError::InsufficientShards { have: subset.len(), need: n + 2 }),
                        "n={n} mask {mask:b}: {got:?}"
                    );
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} subsets checked for n = 1..4"))
}

/// A random chain of `stages` blocks over `input_dim` inputs.
fn random_chain(rng: &mut ChaCha20Rng, stages: usize, input_dim: usize, root: PublicKey) -> ExtractorChain {
    let acts = [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Sigmoid];
    let mut specs = Vec::with_capacity(stages);
    let mut dim = input_dim;
    while specs.len() < stages {
        let activation = *acts.choose(rng).unwrap();
        let spec = match rng.gen_range(0..4) {
            0 => StageSpec::Dense { out: rng.gen_range(4..=16), activation },
            1 if dim >= 3 => {
                let width = rng.gen_range(1..=3);
                StageSpec::Convolution { kernels: rng.gen_range(1..=2), width, activation }
            }
            2 if dim.is_multiple_of(2) && dim >= 4 => StageSpec::Pooling { size: 2 },
            3 => StageSpec::Activation(activation),
            _ => continue,
        };
        let mut probe_rng = ChaCha20Rng::seed_from_u64(0);
        let next = build_stages(&[spec], dim, &mut probe_rng).unwrap()[0].output_dim(dim).unwrap();
        if next > 32 {
            continue;
        }
        dim = next;
        specs.push(spec);
    }
    let params = build_stages(&specs, input_dim, rng).unwrap();
    let mut chain = ExtractorChain::new(input_dim, params, root, rng).unwrap();
    chain.take_snapshot();
    chain
}

fn crypto_free_forward(chain: &ExtractorChain, input: &[f64]) -> Vec<f64> {
    chain.blocks().iter().fold(input.to_vec(), |x, b| apply_stage(&x, &b.params).unwrap())
}

fn chain_localization() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let root = KeyPair::generate(&mut rng);
    let trials = 200;
    for trial in 0..trials {
        let stages = rng.gen_range(5..=10);
        let mut chain = random_chain(&mut rng, stages, 12, root.public());
        let notary = chain.notary().keys.public();
        let ledger = Ledger::in_memory();
        let input = gaussian(&mut rng, 12);
        let before = run_query_cycle(&chain, &ledger, &input, &mut rng).map_err(|e| e.to_string())?;
        let before = encode_vector(&before.open(&root, &notary).map_err(|e| e.to_string())?);

        let index = rng.gen_range(0..stages);
        let magnitude = 10f64.powf(rng.gen_range(-6.0..0.0));
        let epsilon = if rng.gen() { magnitude } else { -magnitude };
        chain.tamper_block(index, epsilon).unwrap();
        let status = chain.verify_chain().map_err(|e| e.to_string())?;
        ensure!(status == ChainStatus::Tampered { first_index: index }, "trial {trial}: tampered {index}, got {status:?}");
        let changed = chain.audit_hashes().unwrap().changed_blocks();
        ensure!(changed == (index..stages).collect::<Vec<_>>(), "trial {trial}: change did not propagate: {changed:?}");
        let refused = run_query_cycle(&chain, &ledger, &input, &mut rng);
        ensure!(
            matches!(refused, Err(ExtractorError::IntegrityFailure { first_index }) if first_index == index),
            "trial {trial}: tampered chain still served a query"
        );

        chain.restore_block(index).map_err(|e| e.to_string())?;
        ensure!(chain.verify_chain().unwrap() == ChainStatus::Intact, "trial {trial}: restore left chain tampered");
        let after = run_query_cycle(&chain, &ledger, &input, &mut rng).map_err(|e| e.to_string())?;
        let after = encode_vector(&after.open(&root, &notary).map_err(|e| e.to_string())?);
        ensure!(after == before, "trial {trial}: feature differs after restore");
    }
    Ok(format!("{trials}/{trials} single-block tampers localized and recovered"))
}

fn same_identification(a: &Identification, b: &Identification) -> bool {
    a.identity == b.identity && a.score == b.score && a.locator == b.locator && a.candidates == b.candidates
}

fn tree_localization() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let d = 16;
    let gallery = random_gallery(&mut rng, 120, d);
    let mut tree = build_tree(&gallery, 50, 5).unwrap();
    ensure!(tree.chiefs().len() == 3, "expected 3 chiefs");
    let probes: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut rng, d)).collect();
    let mut reference = Vec::new();
    for p in &probes {
        reference.push(tree.identify_probe(p, Metric::Euclidean).map_err(|e| e.to_string())?);
    }
    let trials = 100;
    for trial in 0..trials {
        let size = rng.gen_range(1..=10);
        let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, 120, size).into_iter().collect();
        for &g in &chosen {
            let t = tree.template_mut(g).unwrap();
            let k = rng.gen_range(0..d);
            t.vector[k] += rng.gen_range(1e-6..1.0) * if rng.gen() { 1.0 } else { -1.0 };
        }
        let audit = tree.verify_tree();
        let found: BTreeSet<usize> = audit.tampered.iter().map(|&l| tree.global_index(l)).collect();
        ensure!(found == chosen, "trial {trial}: injected {chosen:?}, localized {found:?}");
        let chiefs: BTreeSet<usize> = chosen.iter().map(|g| g / 50).collect();
        ensure!(audit.faulty_chiefs.iter().copied().collect::<BTreeSet<_>>() == chiefs, "trial {trial}: wrong chiefs");
        let locators: Vec<LeafLocator> = audit.tampered.clone();
        tree.restore_leaves(&locators, &gallery).map_err(|e| e.to_string())?;
        ensure!(tree.verify_tree().is_intact(), "trial {trial}: tree not intact after restore");
        let k = trial % probes.len();
        let again = tree.identify_probe(&probes[k], Metric::Euclidean).map_err(|e| e.to_string())?;
        ensure!(same_identification(&again, &reference[k]), "trial {trial}: identification changed after restore");
    }
    Ok(format!("{trials} trials: exact localization, identical results after restore"))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let d = 16;
    let probes = 1000;
    let mut compared = 0;
    // (gallery size, fanout): one chief, and three chiefs with a remainder
    for (size, fanout) in [(40usize, 50usize), (120, 50)] {
        let gallery = random_gallery(&mut rng, size, d);
        for regime in ["honest", "compromised chief", "compromised leaf per chief"] {
            let mut tree = build_tree(&gallery, fanout, rng.gen()).unwrap();
            let chiefs = tree.chiefs().len();
            match regime {
                "compromised chief" => {
                    let c = rng.gen_range(0..chiefs);
                    let behavior = *[ChiefBehavior::ForgeDocument, ChiefBehavior::ForgeAndPadShards, ChiefBehavior::Misattribute]
                        .choose(&mut rng)
                        .unwrap();
                    tree.chief_mut(c).unwrap().behavior = behavior;
                }
                "compromised leaf per chief" => {
                    for c in 0..chiefs {
                        let chief = tree.chief_mut(c).unwrap();
                        let l = rng.gen_range(0..chief.leaves.len());
                        chief.leaves[l].behavior = LeafBehavior::AlwaysDissent;
                    }
                }
                _ => {}
            }
            for i in 0..probes {
                let metric = if i % 2 == 0 { Metric::Euclidean } else { Metric::Cosine };
                let probe = gaussian(&mut rng, d);
                let got = tree.identify_probe(&probe, metric).map_err(|e| e.to_string())?;
                let want = flat_oracle_identify(&gallery, &probe, metric).map_err(|e| e.to_string())?;
                ensure!(
                    got.identity == want.identity && got.score == want.score,
                    "{size}/{fanout} {regime} {metric}: tree {} vs oracle {}",
                    got.identity,
                    want.identity
                );
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} probes agree with the linear scan"))
}

fn protocol_soundness() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let root = KeyPair::generate(&mut rng);
    let mut entries_checked = 0;
    for trial in 0..100 {
        let stages = rng.gen_range(1..=6);
        let input_dim = rng.gen_range(4..=12);
        let chain = random_chain(&mut rng, stages, input_dim, root.public());
        let notary = &chain.notary().keys;
        let ledger = Ledger::in_memory();
        let input = gaussian(&mut rng, input_dim);
        let sealed = run_query_cycle(&chain, &ledger, &input, &mut rng).map_err(|e| e.to_string())?;
        let feature = sealed.open(&root, &notary.public()).map_err(|e| e.to_string())?;
        ensure!(
            encode_vector(&feature) == encode_vector(&crypto_free_forward(&chain, &input)),
            "trial {trial}: protocol output differs from the plain composition"
        );

        // capture to the notary, then notary -> block i -> notary ..., then notary -> root
        let mut everyone: Vec<&KeyPair> = chain.blocks().iter().map(|b| &b.keys).collect();
        everyone.push(notary);
        everyone.push(&root);
        let entries = ledger.entries();
        ensure!(entries.len() == 2 * stages + 2, "trial {trial}: {} entries", entries.len());
        for (pos, entry) in entries.iter().enumerate() {
            let intended: &KeyPair = if pos == entries.len() - 1 {
                &root
            } else if pos % 2 == 1 {
                &chain.blocks()[pos / 2].keys
            } else {
                notary
            };
            let env = Envelope { ed: entry.ed.clone(), ek: entry.ek.clone() };
            for k in &everyone {
                let opened = env.open(k).is_ok();
                let is_intended = k.public() == intended.public();
                ensure!(opened == is_intended, "trial {trial}: entry {pos} opened={opened} for intended={is_intended}");
                if !entry.em.is_empty() && !is_intended {
                    ensure!(asym_decrypt(&entry.em, k).is_err(), "trial {trial}: entry {pos} EM readable by outsider");
                }
            }
            entries_checked += 1;
        }

        // a forged initiation: correct addressing, bad or missing signature
        let attacker = KeyPair::generate(&mut rng);
        let first = chain.blocks()[0].keys.public();
        let replayed = entries[1].sig.clone();
        for sig_kind in ["unsigned", "wrong key", "replayed"] {
            let forged_ledger = Ledger::in_memory();
            let cycle = CycleId(rng.gen());
            let key = SymmetricKey::generate(&mut rng);
            let ed = sym_encrypt(&encode_vector(&input), &key, &mut rng);
            let ek = asym_encrypt(key.as_bytes(), &first, &mut rng).unwrap();
            let em = asym_encrypt(&[START_MESSAGE, &cycle.0].concat(), &first, &mut rng).unwrap();
            let mut draft = EntryDraft { cycle_id: cycle, ed, ek, em, sig: Vec::new() };
            draft.sig = match sig_kind {
                "unsigned" => Vec::new(),
                "wrong key" => sign(&attacker, &draft.signing_payload(UNIVERSAL_MESSAGE)).0.to_vec(),
                _ => replayed.clone(),
            };
            forged_ledger.append(draft).unwrap();
            for block in chain.blocks() {
                let r = block_handle_update(block, &forged_ledger, &mut rng);
                ensure!(r.is_err(), "trial {trial}: block acted on a {sig_kind} initiation");
            }
            ensure!(
                notary_handle_update(&chain, &forged_ledger, &mut rng).is_err(),
                "trial {trial}: notary progressed a {sig_kind} cycle"
            );
            ensure!(forged_ledger.len() == 1, "trial {trial}: {sig_kind} initiation produced entries");
        }

        // a handoff the notary did not sign never reaches the matcher
        let mut fake = sealed.clone();
        let env = Envelope::seal(&encode_vector(&feature), &root.public(), &mut rng).unwrap();
        fake.envelope = env;
        ensure!(
            matches!(fake.open(&root, &notary.public()), Err(ExtractorError::SignatureRejected)),
            "trial {trial}: unsigned handoff accepted"
        );
        let resigned = SealedFeature {
            sig: sign(&attacker, &bioledger::ledger::EntryDraft {
                cycle_id: fake.cycle_id,
                ed: fake.envelope.ed.clone(),
                ek: fake.envelope.ek.clone(),
                em: fake.em.clone(),
                sig: Vec::new(),
            }
            .signing_payload(UNIVERSAL_MESSAGE))
            .0
            .to_vec(),
            ..fake
        };
        ensure!(resigned.open(&root, &notary.public()).is_err(), "trial {trial}: mis-signed handoff accepted");
    }
    Ok(format!("100 chains byte-exact, {entries_checked} ledger entries readable only by their addressee"))
}

/// Coefficient of determination of the least-squares line through `points`.
fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    (sxy * sxy) / (sxx * syy)
}

fn fastest(repeats: usize, mut f: impl FnMut() -> Duration) -> f64 {
    (0..repeats).map(|_| f()).min().expect("at least one repeat").as_secs_f64()
}

fn complexity() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    // matching term against template size at a fixed gallery
    let mut by_dim = Vec::new();
    for d in [4000usize, 8000, 12000, 16000, 20000] {
        let gallery = random_gallery(&mut rng, 20, d);
        let mut tree = build_tree(&gallery, 50, 1).unwrap();
        let probe = gaussian(&mut rng, d);
        let t = fastest(25, || tree.identify_probe(&probe, Metric::Euclidean).unwrap().timings.matching);
        by_dim.push((d as f64, t));
    }
    // whole matcher against leaf count at a fixed template size
    let mut by_leaves = Vec::new();
    for n in [100usize, 200, 300, 400, 500] {
        let gallery = random_gallery(&mut rng, n, 256);
        let mut tree = build_tree(&gallery, 50, 2).unwrap();
        let probe = gaussian(&mut rng, 256);
        let t = fastest(15, || tree.identify_probe(&probe, Metric::Euclidean).unwrap().timings.total());
        by_leaves.push((n as f64, t));
    }
    let (r_dim, r_leaves) = (r_squared(&by_dim), r_squared(&by_leaves));
    ensure!(r_dim >= 0.95, "match time vs dimension R² = {r_dim:.4}: {by_dim:?}");
    ensure!(r_leaves >= 0.95, "matcher time vs leaves R² = {r_leaves:.4}: {by_leaves:?}");
    Ok(format!("R² vs dimension {r_dim:.4}, R² vs leaves {r_leaves:.4}"))
}

fn parse_report_tsv(text: &str) -> Vec<(String, String, usize, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[1].to_string(), f[2].to_string(), f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

fn cmc_correctness(runs: &mut Runs) -> Outcome {
    let small = ExperimentConfig { gallery_size: 30, metric: Metric::Cosine, ranks: 30, ..Default::default() };
    runs.0.push(("cosine".into(), run_experiment(&small).map_err(|e| e.to_string())?));
    let mut points = 0;
    for (name, report) in &runs.0 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        report.write(dir.path()).map_err(|e| e.to_string())?;
        let emitted = parse_report_tsv(&std::fs::read_to_string(dir.path().join("report.tsv")).unwrap());
        ensure!(emitted.len() == 4 * report.ranks, "{name}: {} emitted rows", emitted.len());
        for e in &report.evaluations {
            ensure!(e.cmc.is_monotone(), "{name}: CMC not monotone");
            ensure!(e.cmc.at(1) == Some(e.rank1), "{name}: rank-1 differs from CMC at rank 1");
            let rows: Vec<_> = emitted
                .iter()
                .filter(|r| r.0 == e.architecture.name() && r.1 == e.condition.name())
                .collect();
            ensure!(rows.windows(2).all(|w| w[0].3 <= w[1].3), "{name}: emitted CMC not monotone");
            for row in rows {
                let want = rank_k_accuracy(&e.results, &report.truth, row.2).unwrap();
                ensure!(row.3 == want, "{name} {} {} rank {}: emitted {} recomputed {want}", row.0, row.1, row.2, row.3);
                points += 1;
            }
        }
    }
    Ok(format!("{points} CMC points over {} runs match recomputation", runs.0.len()))
}

fn main() -> ExitCode {
    let mut runs = Runs(Vec::new());
    let mut failed = 0;
    let mut check = |id: u32, name: &str, limit: Duration, outcome: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = outcome();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({elapsed:.1?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{id}] {name}: {why} ({elapsed:.1?})");
            }
        }
    };
    let secs = Duration::from_secs;
    check(1, "tamper retention", secs(30), &mut || tamper_retention(&mut runs));
    check(2, "forged documents never reach consensus", secs(60), &mut consensus_soundness);
    check(3, "shamir threshold sharpness", secs(5), &mut shamir_sharpness);
    check(4, "chain tamper localization", secs(30), &mut chain_localization);
    check(5, "tree tamper localization", secs(60), &mut tree_localization);
    check(6, "tree matches the linear-scan oracle", secs(60), &mut oracle_equivalence);
    check(7, "protocol soundness and access control", secs(60), &mut protocol_soundness);
    check(8, "empirical complexity", secs(120), &mut complexity);
    check(9, "CMC correctness", secs(60), &mut || cmc_correctness(&mut runs));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
