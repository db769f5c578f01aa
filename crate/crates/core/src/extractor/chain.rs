// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use rand::{CryptoRng, RngCore};

use super::stage::StageParams;
use super::ExtractorError;
use crate::crypto::{hash_parts, Digest, KeyPair, PublicKey, SymmetricKey};

const GENESIS_TAG: &[u8] = b"bioledger/chain/genesis";
const BLOCK_TAG: &[u8] = b"bioledger/chain/block";
const NOTARY_TAG: &[u8] = b"bioledger/chain/notary";

/// Stand-in for the hash preceding the first block.
pub fn genesis_digest() -> Digest {
    hash_parts(GENESIS_TAG, &[])
}

/// `Φ(prev_hash, params)`.
pub fn compute_block_hash(prev_hash: &Digest, params: &StageParams) -> Digest {
    hash_parts(BLOCK_TAG, &[prev_hash.as_bytes(), &params.canonical_bytes()])
}

/// `Φ(prev_hash)` under the notary tag.
pub fn compute_notary_hash(prev_hash: &Digest) -> Digest {
    hash_parts(NOTARY_TAG, &[prev_hash.as_bytes()])
}

#[derive(Clone, Debug)]
pub struct ExtractorBlock {
    pub index: usize,
    pub hash: Digest,
    pub keys: KeyPair,
    pub sym_key: SymmetricKey,
    pub notary_public: PublicKey,
    pub params: StageParams,
    pub prev_hash: Digest,
}

#[derive(Clone, Debug)]
pub struct NotaryBlock {
    pub hash: Digest,
    pub keys: KeyPair,
    pub sym_key: SymmetricKey,
    /// Public keys of the extractor blocks in execution order.
    pub route: Vec<PublicKey>,
    pub matcher_root_public: PublicKey,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotBlock {
    pub index: usize,
    pub hash: Digest,
    pub params: Vec<u8>,
    pub public: PublicKey,
}

/// Last known-good state of the chain. `epoch` counts administrative
/// snapshot updates (0 at enrollment).
#[derive(Clone, Debug, PartialEq)]
pub struct StableSnapshot {
    pub epoch: u64,
    pub blocks: Vec<SnapshotBlock>,
    pub notary_hash: Digest,
    pub notary_public: PublicKey,
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"BLSNAP01";

impl StableSnapshot {
    /// Binary layout: magic, epoch (u64), block count (u32), then per block
    /// index (u32), hash, params and public key each as u32-length-prefixed
    /// raw bytes, then notary hash and notary public key the same way. All
    /// integers big-endian.
    pub fn encode(&self) -> Vec<u8> {
        fn field(out: &mut Vec<u8>, bytes: &[u8]) {
            out.extend((bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(bytes);
        }
        let mut out = SNAPSHOT_MAGIC.to_vec();
        out.extend(self.epoch.to_be_bytes());
        out.extend((self.blocks.len() as u32).to_be_bytes());
        for b in &self.blocks {
            out.extend((b.index as u32).to_be_bytes());
            field(&mut out, b.hash.as_bytes());
            field(&mut out, &b.params);
            field(&mut out, &b.public.to_bytes());
        }
        field(&mut out, self.notary_hash.as_bytes());
        field(&mut out, &self.notary_public.to_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ExtractorError> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8)? != SNAPSHOT_MAGIC {
            return Err(snapshot_error("bad magic"));
        }
        let epoch = u64::from_be_bytes(c.take(8)?.try_into().unwrap());
        let count = c.u32()? as usize;
        let mut blocks = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let index = c.u32()? as usize;
            let hash = Digest::from_slice(c.field()?).ok_or_else(|| snapshot_error("digest length"))?;
            let params = c.field()?.to_vec();
            let public = PublicKey::from_bytes(c.field()?)?;
            blocks.push(SnapshotBlock { index, hash, params, public });
        }
        let notary_hash = Digest::from_slice(c.field()?).ok_or_else(|| snapshot_error("digest length"))?;
        let notary_public = PublicKey::from_bytes(c.field()?)?;
        if c.pos != bytes.len() {
            return Err(snapshot_error("trailing bytes"));
        }
        Ok(StableSnapshot { epoch, blocks, notary_hash, notary_public })
    }

    /// Recomputes every hash from the stored parameters and checks it
    /// against the stored digests.
    pub fn is_self_consistent(&self) -> bool {
        let mut prev = genesis_digest();
        for b in &self.blocks {
            let Ok(params) = StageParams::from_canonical_bytes(&b.params) else {
                return false;
            };
            prev = compute_block_hash(&prev, &params);
            if prev != b.hash {
                return false;
            }
        }
        compute_notary_hash(&prev) == self.notary_hash
    }
}

fn snapshot_error(msg: &str) -> ExtractorError {
    ExtractorError::Malformed(format!("snapshot: {msg}"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ExtractorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| snapshot_error("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ExtractorError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn field(&mut self) -> Result<&'a [u8], ExtractorError> {
        let len = self.u32()? as usize;
        self.take(len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainStatus {
    Intact,
    /// Smallest block index whose recomputed hash differs from the snapshot.
    Tampered { first_index: usize },
    /// Every block matches but the notary digest does not.
    NotaryMismatch,
}

/// Per-block comparison of snapshot and recomputed hashes.
#[derive(Clone, Debug, PartialEq)]
pub struct HashAudit {
    pub snapshot: Vec<Digest>,
    pub recomputed: Vec<Digest>,
    pub snapshot_notary: Digest,
    pub recomputed_notary: Digest,
}

impl HashAudit {
    pub fn changed_blocks(&self) -> Vec<usize> {
        (0..self.recomputed.len()).filter(|&i| self.snapshot[i] != self.recomputed[i]).collect()
    }

    pub fn notary_changed(&self) -> bool {
        self.snapshot_notary != self.recomputed_notary
    }
}

/// Feature-extraction chain: stages as blocks plus the terminal notary.
#[derive(Clone, Debug)]
pub struct ExtractorChain {
    input_dim: usize,
    blocks: Vec<ExtractorBlock>,
    notary: NotaryBlock,
    snapshot: Option<StableSnapshot>,
}

impl ExtractorChain {
    /// Builds a chain with fresh keys. Stage shapes must compose starting
    /// from `input_dim`.
    pub fn new<R: RngCore + CryptoRng>(
        input_dim: usize,
        stages: Vec<StageParams>,
        matcher_root_public: PublicKey,
        rng: &mut R,
    ) -> Result<Self, ExtractorError> {
        if stages.is_empty() {
            return Err(ExtractorError::EmptyChain);
        }
        let mut dim = input_dim;
        for s in &stages {
            dim = s.output_dim(dim)?;
        }
        let notary_keys = KeyPair::generate(rng);
        let notary_sym = SymmetricKey::generate(rng);
        let notary_public = notary_keys.public();
        let blocks: Vec<ExtractorBlock> = stages
            .into_iter()
            .enumerate()
            .map(|(index, params)| ExtractorBlock {
                index,
                hash: genesis_digest(),
                keys: KeyPair::generate(rng),
                sym_key: SymmetricKey::generate(rng),
                notary_public,
                params,
                prev_hash: genesis_digest(),
            })
            .collect();
        let notary = NotaryBlock {
            hash: genesis_digest(),
            keys: notary_keys,
            sym_key: notary_sym,
            route: blocks.iter().map(|b| b.keys.public()).collect(),
            matcher_root_public,
        };
        let mut chain = ExtractorChain { input_dim, blocks, notary, snapshot: None };
        chain.refresh_hashes();
        Ok(chain)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Output dimension of the current stage parameters.
    pub fn output_dim(&self) -> Result<usize, ExtractorError> {
        self.blocks.iter().try_fold(self.input_dim, |d, b| b.params.output_dim(d))
    }

    pub fn blocks(&self) -> &[ExtractorBlock] {
        &self.blocks
    }

    pub fn block(&self, index: usize) -> Option<&ExtractorBlock> {
        self.blocks.get(index)
    }

    /// Mutable access for administrative changes and for adversarial tests;
    /// stored hashes are not updated.
    pub fn block_mut(&mut self, index: usize) -> Option<&mut ExtractorBlock> {
        self.blocks.get_mut(index)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn notary(&self) -> &NotaryBlock {
        &self.notary
    }

    pub fn snapshot(&self) -> Option<&StableSnapshot> {
        self.snapshot.as_ref()
    }

    /// Installs a snapshot read back from disk.
    pub fn set_snapshot(&mut self, snapshot: StableSnapshot) {
        self.snapshot = Some(snapshot);
    }

    /// Plain forward pass through every stage, no cryptography.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, ExtractorError> {
        self.blocks.iter().try_fold(input.to_vec(), |x, b| super::apply_stage(&x, &b.params))
    }

    /// Hashes recomputed left to right from the current parameters.
    pub fn recompute_hashes(&self) -> (Vec<Digest>, Digest) {
        let mut prev = genesis_digest();
        let hashes: Vec<Digest> = self
            .blocks
            .iter()
            .map(|b| {
                prev = compute_block_hash(&prev, &b.params);
                prev
            })
            .collect();
        (hashes, compute_notary_hash(&prev))
    }

    /// Rewrites every stored `hash` / `prev_hash` from the current parameters.
    fn refresh_hashes(&mut self) {
        let (hashes, notary) = self.recompute_hashes();
        let mut prev = genesis_digest();
        for (b, h) in self.blocks.iter_mut().zip(hashes) {
            b.prev_hash = prev;
            b.hash = h;
            prev = h;
        }
        self.notary.hash = notary;
    }

    /// Records the current state as stable. The first call yields epoch 0;
    /// later calls are administrative updates and bump the epoch.
    pub fn take_snapshot(&mut self) -> &StableSnapshot {
        self.refresh_hashes();
        let epoch = self.snapshot.as_ref().map_or(0, |s| s.epoch + 1);
        let snapshot = StableSnapshot {
            epoch,
            blocks: self
                .blocks
                .iter()
                .map(|b| SnapshotBlock {
                    index: b.index,
                    hash: b.hash,
                    params: b.params.canonical_bytes(),
                    public: b.keys.public(),
                })
                .collect(),
            notary_hash: self.notary.hash,
            notary_public: self.notary.keys.public(),
        };
        self.snapshot.insert(snapshot)
    }

    pub fn audit_hashes(&self) -> Result<HashAudit, ExtractorError> {
        let snap = self.snapshot.as_ref().ok_or(ExtractorError::NoSnapshot)?;
        let (recomputed, recomputed_notary) = self.recompute_hashes();
        Ok(HashAudit {
            snapshot: snap.blocks.iter().map(|b| b.hash).collect(),
            recomputed,
            snapshot_notary: snap.notary_hash,
            recomputed_notary,
        })
    }

    /// Finds the first block whose recomputed hash departs from the snapshot.
    pub fn verify_chain(&self) -> Result<ChainStatus, ExtractorError> {
        let audit = self.audit_hashes()?;
        if audit.snapshot.len() != audit.recomputed.len() {
            return Err(ExtractorError::Malformed("snapshot block count differs from chain".into()));
        }
        if let Some(first_index) = audit.changed_blocks().first().copied() {
            return Ok(ChainStatus::Tampered { first_index });
        }
        if audit.notary_changed() {
            return Ok(ChainStatus::NotaryMismatch);
        }
        Ok(ChainStatus::Intact)
    }

    /// Replaces block `index`'s parameters with the snapshot's.
    pub fn restore_block(&mut self, index: usize) -> Result<(), ExtractorError> {
        let snap = self.snapshot.as_ref().ok_or(ExtractorError::NoSnapshot)?;
        let stored = snap.blocks.get(index).ok_or(ExtractorError::IndexOutOfRange(index))?;
        let params = StageParams::from_canonical_bytes(&stored.params)?;
        let block = self.blocks.get_mut(index).ok_or(ExtractorError::IndexOutOfRange(index))?;
        block.params = params;
        self.refresh_hashes();
        Ok(())
    }

    /// Runs detect/restore until the chain verifies; returns every index
    /// that was restored, in order.
    pub fn recover(&mut self) -> Result<Vec<usize>, ExtractorError> {
        let mut restored = Vec::new();
        while let ChainStatus::Tampered { first_index } = self.verify_chain()? {
            self.restore_block(first_index)?;
            restored.push(first_index);
        }
        Ok(restored)
    }

    /// Adversarial perturbation of one parameter of block `index`.
    pub fn tamper_block(&mut self, index: usize, epsilon: f64) -> Result<(), ExtractorError> {
        let block = self.blocks.get_mut(index).ok_or(ExtractorError::IndexOutOfRange(index))?;
        block.params.perturb(epsilon);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    use super::super::stage::{Activation, Matrix};
    use super::*;

    fn chain(stages: usize, seed: u64) -> ExtractorChain {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params: Vec<StageParams> = (0..stages)
            .map(|_| {
                let m = Matrix::new(4, 4, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                StageParams::dense(m, vec![0.1; 4], Activation::Tanh).unwrap()
            })
            .collect();
        let root = KeyPair::generate(&mut rng).public();
        let mut c = ExtractorChain::new(4, params, root, &mut rng).unwrap();
        c.take_snapshot();
        c
    }

    #[test]
    fn block_hash_sensitivity() {
        let p = StageParams::dense(Matrix::identity(2), vec![0.0; 2], Activation::Linear).unwrap();
        let g = genesis_digest();
        assert_eq!(compute_block_hash(&g, &p), compute_block_hash(&g, &p));
        let mut q = p.clone();
        q.perturb(2f64.powi(-23));
        assert_ne!(compute_block_hash(&g, &p), compute_block_hash(&g, &q));
        let other = hash_parts(b"x", &[]);
        assert_ne!(compute_block_hash(&g, &p), compute_block_hash(&other, &p));
    }

    #[test]
    fn notary_hash_is_domain_separated() {
        let g = genesis_digest();
        assert_eq!(compute_notary_hash(&g), hash_parts(NOTARY_TAG, &[g.as_bytes()]));
        for p in [
            StageParams::pooling(1).unwrap(),
            StageParams::Activation { activation: Activation::Linear },
            StageParams::dense(Matrix::identity(1), vec![0.0], Activation::Linear).unwrap(),
        ] {
            assert_ne!(compute_notary_hash(&g), compute_block_hash(&g, &p));
        }
    }

    #[test]
    fn stable_state_invariant() {
        let c = chain(4, 1);
        for b in c.blocks() {
            assert_eq!(b.hash, compute_block_hash(&b.prev_hash, &b.params));
        }
        assert_eq!(c.notary().hash, compute_notary_hash(&c.blocks()[3].hash));
        assert!(c.snapshot().unwrap().is_self_consistent());
    }

    #[test]
    fn verify_requires_snapshot() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let root = KeyPair::generate(&mut rng).public();
        let c = ExtractorChain::new(1, vec![StageParams::pooling(1).unwrap()], root, &mut rng).unwrap();
        assert!(matches!(c.verify_chain(), Err(ExtractorError::NoSnapshot)));
        let mut c2 = c.clone();
        assert!(matches!(c2.restore_block(0), Err(ExtractorError::NoSnapshot)));
    }

    #[test]
    fn transitive_propagation_from_tampered_block() {
        let mut c = chain(5, 2);
        assert_eq!(c.verify_chain().unwrap(), ChainStatus::Intact);
        c.tamper_block(2, 1e-6).unwrap();
        assert_eq!(c.verify_chain().unwrap(), ChainStatus::Tampered { first_index: 2 });
        let audit = c.audit_hashes().unwrap();
        assert_eq!(audit.changed_blocks(), vec![2, 3, 4]);
        assert!(audit.notary_changed());
    }

    #[test]
    fn first_tamper_reported_then_next_after_restore() {
        let mut c = chain(5, 3);
        c.tamper_block(1, 0.5).unwrap();
        c.tamper_block(3, 0.5).unwrap();
        assert_eq!(c.verify_chain().unwrap(), ChainStatus::Tampered { first_index: 1 });
        c.restore_block(1).unwrap();
        assert_eq!(c.verify_chain().unwrap(), ChainStatus::Tampered { first_index: 3 });
        c.restore_block(3).unwrap();
        assert_eq!(c.verify_chain().unwrap(), ChainStatus::Intact);
    }

    #[test]
    fn restore_is_idempotent() {
        let mut c = chain(3, 4);
        let original = c.blocks()[1].params.canonical_bytes();
        c.restore_block(1).unwrap();
        assert_eq!(c.blocks()[1].params.canonical_bytes(), original);
        for _ in 0..3 {
            c.tamper_block(1, 0.25).unwrap();
            assert_ne!(c.verify_chain().unwrap(), ChainStatus::Intact);
            assert_eq!(c.recover().unwrap(), vec![1]);
            assert_eq!(c.verify_chain().unwrap(), ChainStatus::Intact);
        }
        assert!(matches!(c.restore_block(9), Err(ExtractorError::IndexOutOfRange(9))));
        assert!(matches!(c.tamper_block(9, 1.0), Err(ExtractorError::IndexOutOfRange(9))));
    }

    #[test]
    fn zero_epsilon_keeps_chain_intact() {
        let mut c = chain(3, 5);
        c.tamper_block(0, 0.0).unwrap();
        assert_eq!(c.verify_chain().unwrap(), ChainStatus::Intact);
    }

    #[test]
    fn snapshot_encoding_round_trip() {
        let mut c = chain(3, 6);
        let snap = c.snapshot().unwrap().clone();
        let bytes = snap.encode();
        assert_eq!(StableSnapshot::decode(&bytes).unwrap(), snap);
        assert!(StableSnapshot::decode(&bytes[..bytes.len() - 1]).is_err());
        let next = c.take_snapshot();
        assert_eq!(next.epoch, 1);
    }

    #[test]
    fn shape_mismatch_rejected_at_construction() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let root = KeyPair::generate(&mut rng).public();
        let p = StageParams::dense(Matrix::identity(3), vec![0.0; 3], Activation::Linear).unwrap();
        assert!(matches!(
            ExtractorChain::new(4, vec![p], root, &mut rng),
            Err(ExtractorError::ShapeMismatch { .. })
        ));
        assert!(matches!(ExtractorChain::new(4, vec![], root, &mut rng), Err(ExtractorError::EmptyChain)));
    }
}
