// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use std::ops::AddAssign;
use std::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use web_time::Instant;

use super::consensus::{ConsensusOutcome, DecisionDocument, ShardPool};
use super::MatcherError;
use crate::crypto::{
    hash_parts, shamir_reconstruct, shamir_split, sign, verify, Digest, Envelope, KeyPair, PublicKey, Shard,
    SharingConfig, SymmetricKey, MAX_SHARDS,
};
use crate::extractor::{decode_vector, encode_vector, SealedFeature};
use crate::ledger::CycleId;
use crate::metrics::{MatchScore, Metric};
use crate::Template;

const LEAF_TAG: &[u8] = b"bioledger/tree/leaf";
const NODE_TAG: &[u8] = b"bioledger/tree/node";
const CONSENSUS_NONCE_TAG: &[u8] = b"bioledger/tree/consensus-nonce";

/// Largest chief size whose `2n+1` shards fit the sharing field.
pub const MAX_FANOUT: usize = (MAX_SHARDS - 1) / 2;

pub fn leaf_hash(template: &Template) -> Digest {
    hash_parts(LEAF_TAG, &[&template.canonical_bytes()])
}

/// Aggregate digest of an ordered list of child digests.
pub fn node_hash(children: &[Digest]) -> Digest {
    let parts: Vec<&[u8]> = children.iter().map(|d| d.as_bytes().as_slice()).collect();
    hash_parts(NODE_TAG, &parts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LeafBehavior {
    #[default]
    Honest,
    /// Withholds its shard from every document.
    AlwaysDissent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChiefBehavior {
    #[default]
    Honest,
    /// Drafts the worst-scoring leaf as its decision.
    ForgeDocument,
    /// Forges, then pads the pool with fabricated shards up to the threshold.
    ForgeAndPadShards,
    /// Keeps the best score but names the runner-up leaf.
    Misattribute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafLocator {
    pub chief: usize,
    pub leaf: usize,
}

#[derive(Clone, Debug)]
pub struct LeafBlock {
    pub template: Template,
    pub shard: Shard,
    pub flag: bool,
    pub hash: Digest,
    pub last_score: Option<(CycleId, f64)>,
    pub keys: KeyPair,
    /// Channel key agreed with the chief at enrollment.
    pub channel: SymmetricKey,
    pub behavior: LeafBehavior,
}

impl LeafBlock {
    /// Scores `probe` against the stored template and remembers the result
    /// for `cycle`.
    pub fn score(&mut self, probe: &[f64], metric: Metric, cycle: CycleId) -> Result<f64, MatcherError> {
        let s = metric.distance(&self.template.vector, probe)?;
        self.last_score = Some((cycle, s));
        Ok(s)
    }

    fn score_for(&self, cycle: &CycleId) -> Option<f64> {
        self.last_score.filter(|(c, _)| c == cycle).map(|(_, s)| s)
    }

    /// A leaf backs a document whose score is no worse than its own. The
    /// leaf a document names also insists on its own identity and exact
    /// score, so a chief cannot pin the best score on another leaf.
    fn consents_to(&self, position: usize, doc: &DecisionDocument) -> bool {
        let own = match (self.behavior, self.score_for(&doc.cycle_id)) {
            (LeafBehavior::Honest, Some(own)) => own,
            _ => return false,
        };
        let named = doc.leaf_index == position || doc.identity == self.template.identity;
        if named {
            doc.leaf_index == position && doc.identity == self.template.identity && doc.score == own
        } else {
            doc.score <= own
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChiefBlock {
    pub leaves: Vec<LeafBlock>,
    pub leaf_hash_copies: Vec<Digest>,
    /// Per-leaf channel keys, in leaf order.
    pub leaf_channels: Vec<SymmetricKey>,
    pub retained_shards: Vec<Shard>,
    pub decision_public: PublicKey,
    pub hash: Digest,
    pub keys: KeyPair,
    pub behavior: ChiefBehavior,
}

impl ChiefBlock {
    /// Honest draft: lowest score, ties to the lowest leaf position.
    pub fn draft_document(&self, chief_id: usize, cycle: CycleId, metric: Metric) -> Result<DecisionDocument, MatcherError> {
        let mut best: Option<(usize, f64)> = None;
        for (i, leaf) in self.leaves.iter().enumerate() {
            let s = leaf.score_for(&cycle).ok_or(MatcherError::MissingScores { chief: chief_id, leaf: i })?;
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
        let (leaf_index, score) = best.expect("chief has at least one leaf");
        Ok(DecisionDocument {
            chief_id,
            cycle_id: cycle,
            identity: self.leaves[leaf_index].template.identity.clone(),
            leaf_index,
            score,
            metric,
        })
    }

    /// What a compromised chief submits: the worst-scoring leaf's claim.
    fn forge_document(&self, honest: &DecisionDocument) -> DecisionDocument {
        let worst = self
            .leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.score_for(&honest.cycle_id).map(|s| (i, s)))
            .filter(|&(_, s)| s > honest.score)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, s)) => DecisionDocument {
                identity: self.leaves[i].template.identity.clone(),
                leaf_index: i,
                score: s,
                ..honest.clone()
            },
            None => honest.clone(),
        }
    }

    fn misattribute(&self, honest: &DecisionDocument) -> DecisionDocument {
        let runner_up = self
            .leaves
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != honest.leaf_index)
            .filter_map(|(i, l)| l.score_for(&honest.cycle_id).map(|s| (i, s)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match runner_up {
            Some((i, _)) => DecisionDocument {
                identity: self.leaves[i].template.identity.clone(),
                leaf_index: i,
                ..honest.clone()
            },
            None => honest.clone(),
        }
    }

    /// Circulates `doc` to the leaves. Consenting leaves add their shard;
    /// dissenting leaves raise their flag. The chief then adds its own.
    pub fn collect_consent(&mut self, doc: &DecisionDocument) -> ShardPool {
        let mut pool = ShardPool::default();
        for (i, leaf) in self.leaves.iter_mut().enumerate() {
            if leaf.consents_to(i, doc) {
                pool.shards.push(leaf.shard.clone());
                pool.consents += 1;
            } else {
                leaf.flag = true;
                pool.dissenters.push(i);
            }
        }
        pool.shards.extend(self.retained_shards.iter().cloned());
        pool
    }

    pub fn clear_flags(&mut self) {
        for leaf in &mut self.leaves {
            leaf.flag = false;
        }
    }

    fn recompute_hash(&self) -> (Vec<Digest>, Digest) {
        let leaves: Vec<Digest> = self.leaves.iter().map(|l| leaf_hash(&l.template)).collect();
        let h = node_hash(&leaves);
        (leaves, h)
    }
}

/// Root-side state of one root-chief decision key.
#[derive(Clone, Debug)]
pub struct DecisionLink {
    pub public: PublicKey,
    pub config: SharingConfig,
    /// Inert in the consensus protocol.
    pub root_retained: Vec<Shard>,
    pub contribution: Shard,
}

/// Per-term timing breakdown of a match.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MatcherTimings {
    pub delegate: Duration,
    pub matching: Duration,
    pub compare_leaves: Duration,
    pub shamir: Duration,
    pub compare_chiefs: Duration,
}

impl MatcherTimings {
    pub fn total(&self) -> Duration {
        self.delegate + self.matching + self.compare_leaves + self.shamir + self.compare_chiefs
    }
}

impl AddAssign for MatcherTimings {
    fn add_assign(&mut self, o: Self) {
        self.delegate += o.delegate;
        self.matching += o.matching;
        self.compare_leaves += o.compare_leaves;
        self.shamir += o.shamir;
        self.compare_chiefs += o.compare_chiefs;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChiefOutcome {
    pub chief: usize,
    pub outcome: ConsensusOutcome,
    /// Document as drafted by the chief.
    pub submitted: DecisionDocument,
    /// Document the root settled on for this path.
    pub decided: DecisionDocument,
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Identification {
    pub identity: String,
    pub score: f64,
    pub locator: LeafLocator,
    /// Every gallery entry, ascending by score, ties in gallery order.
    pub candidates: Vec<MatchScore>,
    pub outcomes: Vec<ChiefOutcome>,
    pub timings: MatcherTimings,
}

/// Result of a bottom-up hash audit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TreeAudit {
    pub root_changed: bool,
    /// Chiefs whose recomputed hash differs from the root's copy.
    pub faulty_chiefs: Vec<usize>,
    pub tampered: Vec<LeafLocator>,
}

impl TreeAudit {
    pub fn is_intact(&self) -> bool {
        !self.root_changed && self.tampered.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct MatcherTree {
    chiefs: Vec<ChiefBlock>,
    chief_hash_copies: Vec<Digest>,
    links: Vec<DecisionLink>,
    hash: Digest,
    keys: KeyPair,
    fanout: usize,
    dim: usize,
    trusted_notary: Option<PublicKey>,
    rng: ChaCha20Rng,
}

/// Builds the tree: `ceil(len / fanout)` chiefs, each full except possibly
/// the last. Keys and shards come from `seed`, so the same inputs rebuild
/// the same tree.
pub fn build_tree(gallery: &[Template], fanout: usize, seed: u64) -> Result<MatcherTree, MatcherError> {
    MatcherTree::build(gallery, fanout, seed)
}

impl MatcherTree {
    pub fn build(gallery: &[Template], fanout: usize, seed: u64) -> Result<Self, MatcherError> {
        if gallery.is_empty() {
            return Err(MatcherError::EmptyGallery);
        }
        if fanout == 0 || fanout > MAX_FANOUT {
            return Err(MatcherError::InvalidFanout { got: fanout, max: MAX_FANOUT });
        }
        let dim = gallery[0].dim();
        for (i, t) in gallery.iter().enumerate() {
            if t.dim() != dim {
                return Err(MatcherError::DimensionMismatch { index: i, expected: dim, got: t.dim() });
            }
            if t.vector.iter().any(|x| !x.is_finite()) {
                return Err(MatcherError::NonFinite(i));
            }
        }

        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keys = KeyPair::generate(&mut rng);
        let placeholder = Shard { index: 0, payload: Vec::new() };
        let mut chiefs = Vec::with_capacity(gallery.len().div_ceil(fanout));
        for group in gallery.chunks(fanout) {
            let chief_keys = KeyPair::generate(&mut rng);
            let mut leaves = Vec::with_capacity(group.len());
            let mut leaf_channels = Vec::with_capacity(group.len());
            for t in group {
                let keys = KeyPair::generate(&mut rng);
                leaf_channels.push(chief_keys.agree(&keys.public())?);
                leaves.push(LeafBlock {
                    template: t.clone(),
                    shard: placeholder.clone(),
                    flag: false,
                    hash: leaf_hash(t),
                    last_score: None,
                    channel: keys.agree(&chief_keys.public())?,
                    keys,
                    behavior: LeafBehavior::Honest,
                });
            }
            let leaf_hash_copies: Vec<Digest> = leaves.iter().map(|l| l.hash).collect();
            let hash = node_hash(&leaf_hash_copies);
            chiefs.push(ChiefBlock {
                leaves,
                leaf_hash_copies,
                leaf_channels,
                retained_shards: Vec::new(),
                decision_public: keys.public(),
                hash,
                keys: chief_keys,
                behavior: ChiefBehavior::Honest,
            });
        }
        let chief_hash_copies: Vec<Digest> = chiefs.iter().map(|c| c.hash).collect();
        let hash = node_hash(&chief_hash_copies);
        let mut tree = MatcherTree {
            chiefs,
            chief_hash_copies,
            links: Vec::new(),
            hash,
            keys,
            fanout,
            dim,
            trusted_notary: None,
            rng,
        };
        for c in 0..tree.chiefs.len() {
            let link = tree.make_link(c)?;
            tree.links.push(link);
        }
        Ok(tree)
    }

    /// Generates a fresh decision key for the link to chief `c` and hands out
    /// its shards: indices `1..n` to the root (the last of these is its
    /// contribution), `n+1` to the chief and `n+2..=2n+1` to the leaves.
    fn make_link(&mut self, c: usize) -> Result<DecisionLink, MatcherError> {
        let n = self.chiefs[c].leaves.len();
        let config = SharingConfig::for_leaves(n)?;
        let decision = KeyPair::generate(&mut self.rng);
        let mut shards = shamir_split(decision.seed(), &config, &mut self.rng)?.into_iter();
        let mut root_held: Vec<Shard> = shards.by_ref().take(n).collect();
        let contribution = root_held.pop().expect("n >= 1");
        let chief = &mut self.chiefs[c];
        chief.retained_shards = vec![shards.next().expect("2n+1 shards")];
        for (leaf, shard) in chief.leaves.iter_mut().zip(shards) {
            leaf.shard = shard;
        }
        chief.decision_public = decision.public();
        Ok(DecisionLink { public: decision.public(), config, root_retained: root_held, contribution })
    }

    /// Re-keys the root-chief link of chief `c`.
    pub fn setup_decision_keys(&mut self, c: usize) -> Result<(), MatcherError> {
        if c >= self.chiefs.len() {
            return Err(MatcherError::UnknownChief(c));
        }
        self.links[c] = self.make_link(c)?;
        Ok(())
    }

    pub fn root_public(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn root_keys(&self) -> &KeyPair {
        &self.keys
    }

    /// Notary key under which handoffs must be signed.
    pub fn set_trusted_notary(&mut self, notary: PublicKey) {
        self.trusted_notary = Some(notary);
    }

    pub fn hash(&self) -> Digest {
        self.hash
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chiefs(&self) -> &[ChiefBlock] {
        &self.chiefs
    }

    pub fn chief_mut(&mut self, c: usize) -> Option<&mut ChiefBlock> {
        self.chiefs.get_mut(c)
    }

    pub fn chief_hash_copies(&self) -> &[Digest] {
        &self.chief_hash_copies
    }

    pub fn links(&self) -> &[DecisionLink] {
        &self.links
    }

    pub fn leaf_count(&self) -> usize {
        self.chiefs.iter().map(|c| c.leaves.len()).sum()
    }

    pub fn locate(&self, global: usize) -> Option<LeafLocator> {
        let loc = LeafLocator { chief: global / self.fanout, leaf: global % self.fanout };
        self.chiefs.get(loc.chief)?.leaves.get(loc.leaf)?;
        Some(loc)
    }

    pub fn global_index(&self, loc: LeafLocator) -> usize {
        loc.chief * self.fanout + loc.leaf
    }

    pub fn leaf(&self, loc: LeafLocator) -> Option<&LeafBlock> {
        self.chiefs.get(loc.chief)?.leaves.get(loc.leaf)
    }

    pub fn leaf_mut(&mut self, loc: LeafLocator) -> Option<&mut LeafBlock> {
        self.chiefs.get_mut(loc.chief)?.leaves.get_mut(loc.leaf)
    }

    /// Templates in gallery order.
    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.chiefs.iter().flat_map(|c| c.leaves.iter().map(|l| &l.template))
    }

    /// Direct write access to a stored template, as an attacker with access
    /// to a leaf would have. Hash copies are not touched.
    pub fn template_mut(&mut self, global: usize) -> Option<&mut Template> {
        let loc = self.locate(global)?;
        self.leaf_mut(loc).map(|l| &mut l.template)
    }

    /// Adds the root's contribution shard and tries to rebuild the decision
    /// key. The rebuilt key must sign a fresh nonce that verifies under the
    /// link's stored public key.
    pub fn root_finalize(&mut self, chief_id: usize, doc: &DecisionDocument, pool: &ShardPool) -> ConsensusOutcome {
        let Some(link) = self.links.get(chief_id) else {
            return ConsensusOutcome::ScrutinyTriggered;
        };
        if doc.chief_id != chief_id || doc.leaf_index >= self.chiefs[chief_id].leaves.len() {
            return ConsensusOutcome::ScrutinyTriggered;
        }
        let mut shards = pool.shards.clone();
        shards.push(link.contribution.clone());
        let Ok(seed) = shamir_reconstruct(&shards, &link.config) else {
            return ConsensusOutcome::ScrutinyTriggered;
        };
        let Ok(seed) = <[u8; 32]>::try_from(seed.as_slice()) else {
            return ConsensusOutcome::ScrutinyTriggered;
        };
        let public = link.public;
        let mut fresh = [0u8; 32];
        self.rng.fill_bytes(&mut fresh);
        let nonce = hash_parts(
            CONSENSUS_NONCE_TAG,
            &[&fresh, &doc.cycle_id.0, doc.identity.as_bytes(), &doc.score.to_bits().to_be_bytes()],
        );
        let candidate = KeyPair::from_seed(seed);
        if verify(&public, &sign(&candidate, nonce.as_bytes()), nonce.as_bytes()) {
            ConsensusOutcome::Accepted
        } else {
            ConsensusOutcome::ScrutinyTriggered
        }
    }

    /// Re-decides a path after failed consensus: the minimum over the flagged
    /// leaves' own scores and the document's score. A document whose named
    /// leaf disputes it is discarded and every leaf on the path is compared
    /// instead. Clears the flags.
    pub fn root_scrutinize(
        &mut self,
        chief_id: usize,
        cycle: CycleId,
        doc: &DecisionDocument,
    ) -> Result<DecisionDocument, MatcherError> {
        let chief = self.chiefs.get_mut(chief_id).ok_or(MatcherError::UnknownChief(chief_id))?;
        let credible = doc.chief_id == chief_id
            && doc.cycle_id == cycle
            && chief.leaves.get(doc.leaf_index).is_some_and(|l| !l.flag && l.template.identity == doc.identity);
        let mut decided: Option<DecisionDocument> = credible.then(|| doc.clone());
        for (i, leaf) in chief.leaves.iter().enumerate() {
            if credible && !leaf.flag {
                continue;
            }
            let s = leaf.score_for(&cycle).ok_or(MatcherError::MissingScores { chief: chief_id, leaf: i })?;
            if decided.as_ref().is_none_or(|d| !d.beats(s, i)) {
                decided = Some(DecisionDocument {
                    chief_id,
                    cycle_id: cycle,
                    identity: leaf.template.identity.clone(),
                    leaf_index: i,
                    score: s,
                    ..doc.clone()
                });
            }
        }
        chief.clear_flags();
        Ok(decided.expect("chief has at least one leaf"))
    }

    /// Identifies a feature vector handed off by the notary.
    pub fn identify(&mut self, sealed: &SealedFeature, metric: Metric) -> Result<Identification, MatcherError> {
        let notary = self.trusted_notary.ok_or(MatcherError::UntrustedHandoff)?;
        let probe = sealed.open(&self.keys, &notary)?;
        self.match_probe(&probe, sealed.cycle_id, metric)
    }

    /// Identifies a probe presented directly to the root.
    pub fn identify_probe(&mut self, probe: &[f64], metric: Metric) -> Result<Identification, MatcherError> {
        let cycle = CycleId(self.rng.gen());
        self.match_probe(probe, cycle, metric)
    }

    fn match_probe(&mut self, probe: &[f64], cycle: CycleId, metric: Metric) -> Result<Identification, MatcherError> {
        if probe.len() != self.dim {
            return Err(crate::metrics::MetricError::DimensionMismatch { left: self.dim, right: probe.len() }.into());
        }
        let mut timings = MatcherTimings::default();
        let bytes = encode_vector(probe);

        // fan out and score
        for chief in &mut self.chiefs {
            let t = Instant::now();
            let to_chief = Envelope::seal(&bytes, &chief.keys.public(), &mut self.rng)?;
            let at_chief = to_chief.open(&chief.keys)?;
            let to_leaves = Envelope::seal_shared_under(&at_chief, &chief.leaf_channels, &mut self.rng);
            let mut at_leaves = Vec::with_capacity(to_leaves.len());
            for (leaf, env) in chief.leaves.iter().zip(&to_leaves) {
                at_leaves.push(decode_vector(&env.open_under(&leaf.channel)?)?);
            }
            timings.delegate += t.elapsed();

            let t = Instant::now();
            for (leaf, p) in chief.leaves.iter_mut().zip(&at_leaves) {
                leaf.score(p, metric, cycle)?;
            }
            timings.matching += t.elapsed();
        }

        let mut outcomes = Vec::with_capacity(self.chiefs.len());
        for c in 0..self.chiefs.len() {
            let t = Instant::now();
            let chief = &self.chiefs[c];
            let honest = chief.draft_document(c, cycle, metric)?;
            let submitted = match chief.behavior {
                ChiefBehavior::Honest => honest,
                ChiefBehavior::ForgeDocument | ChiefBehavior::ForgeAndPadShards => chief.forge_document(&honest),
                ChiefBehavior::Misattribute => chief.misattribute(&honest),
            };
            timings.compare_leaves += t.elapsed();

            let t = Instant::now();
            let behavior = self.chiefs[c].behavior;
            let mut pool = self.chiefs[c].collect_consent(&submitted);
            if behavior == ChiefBehavior::ForgeAndPadShards {
                let config = self.links[c].config;
                pad_with_fabricated_shards(&mut pool, &config, &mut self.rng);
            }
            let flagged = pool.dissenters.clone();
            let outcome = self.root_finalize(c, &submitted, &pool);
            let decided = match outcome {
                ConsensusOutcome::Accepted => {
                    self.chiefs[c].clear_flags();
                    submitted.clone()
                }
                ConsensusOutcome::ScrutinyTriggered => self.root_scrutinize(c, cycle, &submitted)?,
            };
            timings.shamir += t.elapsed();
            outcomes.push(ChiefOutcome { chief: c, outcome, submitted, decided, flagged });
        }

        let t = Instant::now();
        let best = outcomes
            .iter()
            .map(|o| &o.decided)
            .reduce(|a, b| if b.score < a.score { b } else { a })
            .expect("tree has at least one chief");
        let locator = LeafLocator { chief: best.chief_id, leaf: best.leaf_index };
        let (identity, score) = (best.identity.clone(), best.score);
        timings.compare_chiefs += t.elapsed();

        let mut candidates: Vec<MatchScore> = self
            .chiefs
            .iter()
            .flat_map(|c| c.leaves.iter())
            .map(|l| MatchScore {
                identity: l.template.identity.clone(),
                score: l.score_for(&cycle).expect("scored above"),
                metric,
            })
            .collect();
        candidates.sort_by(|a, b| a.score.total_cmp(&b.score));

        Ok(Identification { identity, score, locator, candidates, outcomes, timings })
    }

    /// Recomputes every hash bottom-up and walks from the root to the faulty
    /// chiefs and from them to the faulty leaves using the stored copies.
    pub fn verify_tree(&self) -> TreeAudit {
        let recomputed: Vec<(Vec<Digest>, Digest)> = self.chiefs.iter().map(ChiefBlock::recompute_hash).collect();
        let root = node_hash(&recomputed.iter().map(|(_, h)| *h).collect::<Vec<_>>());
        let mut audit = TreeAudit { root_changed: root != self.hash, ..Default::default() };
        if !audit.root_changed {
            return audit;
        }
        for (c, (leaves, chief_hash)) in recomputed.iter().enumerate() {
            if *chief_hash == self.chief_hash_copies[c] {
                continue;
            }
            audit.faulty_chiefs.push(c);
            let copies = &self.chiefs[c].leaf_hash_copies;
            for (l, h) in leaves.iter().enumerate() {
                if copies.get(l) != Some(h) {
                    audit.tampered.push(LeafLocator { chief: c, leaf: l });
                }
            }
        }
        audit
    }

    /// Puts enrollment-time templates back into the given leaves. `archive`
    /// is indexed in gallery order.
    pub fn restore_leaves(&mut self, locators: &[LeafLocator], archive: &[Template]) -> Result<(), MatcherError> {
        for &loc in locators {
            let global = self.global_index(loc);
            let original = archive.get(global).ok_or(MatcherError::ArchiveMissing(global))?.clone();
            let leaf = self.leaf_mut(loc).ok_or(MatcherError::ArchiveMissing(global))?;
            leaf.hash = leaf_hash(&original);
            leaf.template = original;
        }
        Ok(())
    }
}

/// Fills the pool to the threshold with shards the chief made up.
fn pad_with_fabricated_shards(pool: &mut ShardPool, config: &SharingConfig, rng: &mut ChaCha20Rng) {
    let len = pool.shards.first().map_or(32, |s| s.payload.len());
    let mut index = 1u8;
    // one slot is left for the root's contribution
    while pool.shards.len() + 1 < config.threshold {
        while pool.shards.iter().any(|s| s.index == index) {
            index += 1;
        }
        let mut payload = vec![0u8; len];
        rng.fill_bytes(&mut payload);
        pool.shards.push(Shard { index, payload });
        index += 1;
    }
}
