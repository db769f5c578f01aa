// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Append-only ledger of `(ED, EK, EM, S)` tuples exchanged during query
//! cycles.
//!
//! A cycle is opened by its first entry and stays open until
//! [`Ledger::close_cycle`] or until an entry for a different cycle arrives,
//! so the entries of one cycle always occupy a contiguous range of `seq`.
//!
//! On disk the ledger is a sequence of records, each a 4-byte big-endian
//! length followed by the entry bytes. Entry fields are themselves
//! length-prefixed (4-byte big-endian) in the order
//! `seq, cycle_id, ed, ek, em, sig`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, Digest};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("cycle {0} is closed")]
    ClosedCycle(CycleId),
    #[error("unknown cycle {0}")]
    UnknownCycle(CycleId),
    #[error("corrupt ledger: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Random per-cycle nonce minted by the notary.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CycleId(pub [u8; 16]);

impl CycleId {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut id = [0u8; 16];
        rng.fill_bytes(&mut id);
        CycleId(id)
    }
}

impl fmt::Display for CycleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for CycleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CycleId({self})")
    }
}

/// Entry contents before the ledger assigns a sequence number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntryDraft {
    pub cycle_id: CycleId,
    pub ed: Vec<u8>,
    pub ek: Vec<u8>,
    pub em: Vec<u8>,
    pub sig: Vec<u8>,
}

impl EntryDraft {
    /// The bytes a writer signs: the cycle nonce and a digest of the three
    /// ciphertext fields.
    pub fn signing_payload(&self, tag: &[u8]) -> Vec<u8> {
        signing_payload(tag, &self.cycle_id, &self.ed, &self.ek, &self.em)
    }
}

pub(crate) fn signing_payload(tag: &[u8], cycle: &CycleId, ed: &[u8], ek: &[u8], em: &[u8]) -> Vec<u8> {
    let body = hash_parts(b"bioledger/entry-body", &[ed, ek, em]);
    [tag, &cycle.0, body.as_bytes()].concat()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub seq: u64,
    pub cycle_id: CycleId,
    pub ed: Vec<u8>,
    pub ek: Vec<u8>,
    pub em: Vec<u8>,
    pub sig: Vec<u8>,
}

impl LedgerEntry {
    pub fn signing_payload(&self, tag: &[u8]) -> Vec<u8> {
        signing_payload(tag, &self.cycle_id, &self.ed, &self.ek, &self.em)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.ed.len() + self.ek.len() + self.em.len() + self.sig.len());
        for field in [
            &self.seq.to_be_bytes()[..],
            &self.cycle_id.0[..],
            &self.ed,
            &self.ek,
            &self.em,
            &self.sig,
        ] {
            out.extend_from_slice(&(field.len() as u32).to_be_bytes());
            out.extend_from_slice(field);
        }
        out
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut fields = Vec::with_capacity(6);
        for _ in 0..6 {
            let (field, rest) = take_prefixed(bytes)?;
            fields.push(field.to_vec());
            bytes = rest;
        }
        if !bytes.is_empty() {
            return Err(LedgerError::Corrupt("trailing bytes after entry".into()));
        }
        let sig = fields.pop().unwrap();
        let em = fields.pop().unwrap();
        let ek = fields.pop().unwrap();
        let ed = fields.pop().unwrap();
        let cycle: [u8; 16] = fields[1]
            .as_slice()
            .try_into()
            .map_err(|_| LedgerError::Corrupt("cycle id must be 16 bytes".into()))?;
        let seq: [u8; 8] = fields[0]
            .as_slice()
            .try_into()
            .map_err(|_| LedgerError::Corrupt("seq must be 8 bytes".into()))?;
        Ok(LedgerEntry { seq: u64::from_be_bytes(seq), cycle_id: CycleId(cycle), ed, ek, em, sig })
    }
}

fn take_prefixed(bytes: &[u8]) -> Result<(&[u8], &[u8]), LedgerError> {
    if bytes.len() < 4 {
        return Err(LedgerError::Corrupt("truncated length prefix".into()));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    let rest = &bytes[4..];
    if rest.len() < len {
        return Err(LedgerError::Corrupt(format!("field of {len} bytes truncated")));
    }
    Ok(rest.split_at(len))
}

/// Splits a ledger file image into entries.
pub fn decode_records(mut bytes: &[u8]) -> Result<Vec<LedgerEntry>, LedgerError> {
    let mut entries = Vec::new();
    while !bytes.is_empty() {
        let (record, rest) = take_prefixed(bytes)?;
        entries.push(LedgerEntry::decode(record)?);
        bytes = rest;
    }
    Ok(entries)
}

pub fn encode_record(entry: &LedgerEntry) -> Vec<u8> {
    let body = entry.encode();
    let mut out = (body.len() as u32).to_be_bytes().to_vec();
    out.extend(body);
    out
}

#[derive(Default)]
struct State {
    entries: Vec<Arc<LedgerEntry>>,
    open: Option<CycleId>,
    closed: HashSet<CycleId>,
    /// cycle -> index of its last entry
    last_of: HashMap<CycleId, usize>,
}

pub struct Ledger {
    state: RwLock<State>,
    sink: Option<Mutex<File>>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger").field("len", &self.len()).field("persistent", &self.sink.is_some()).finish()
    }
}

impl Ledger {
    pub fn in_memory() -> Self {
        Ledger { state: RwLock::new(State::default()), sink: None }
    }

    /// Creates (or truncates) a ledger file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let file = File::create(path)?;
        Ok(Ledger { state: RwLock::new(State::default()), sink: Some(Mutex::new(file)) })
    }

    /// Opens an existing ledger file for further appends. Every cycle found in
    /// the file is treated as closed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(path)?.read_to_end(&mut bytes)?;
        }
        let mut state = State::default();
        for (i, entry) in decode_records(&bytes)?.into_iter().enumerate() {
            if entry.seq != i as u64 {
                return Err(LedgerError::Corrupt(format!("entry {i} has seq {}", entry.seq)));
            }
            state.closed.insert(entry.cycle_id);
            state.last_of.insert(entry.cycle_id, i);
            state.entries.push(Arc::new(entry));
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Ledger { state: RwLock::new(state), sink: Some(Mutex::new(file)) })
    }

    /// Appends an entry and returns its sequence number. An entry for an
    /// unseen cycle opens it and closes whichever cycle was open.
    pub fn append(&self, draft: EntryDraft) -> Result<u64, LedgerError> {
        let mut state = self.state.write().expect("ledger lock poisoned");
        if state.closed.contains(&draft.cycle_id) {
            return Err(LedgerError::ClosedCycle(draft.cycle_id));
        }
        if state.open != Some(draft.cycle_id) {
            if let Some(prev) = state.open.take() {
                state.closed.insert(prev);
            }
            state.open = Some(draft.cycle_id);
        }
        let seq = state.entries.len() as u64;
        let entry = LedgerEntry {
            seq,
            cycle_id: draft.cycle_id,
            ed: draft.ed,
            ek: draft.ek,
            em: draft.em,
            sig: draft.sig,
        };
        if let Some(sink) = &self.sink {
            let mut file = sink.lock().expect("ledger file lock poisoned");
            file.write_all(&encode_record(&entry))?;
            file.flush()?;
        }
        state.last_of.insert(entry.cycle_id, seq as usize);
        state.entries.push(Arc::new(entry));
        Ok(seq)
    }

    pub fn close_cycle(&self, cycle: CycleId) -> Result<(), LedgerError> {
        let mut state = self.state.write().expect("ledger lock poisoned");
        if !state.last_of.contains_key(&cycle) {
            return Err(LedgerError::UnknownCycle(cycle));
        }
        if state.open == Some(cycle) {
            state.open = None;
        }
        state.closed.insert(cycle);
        Ok(())
    }

    pub fn is_closed(&self, cycle: &CycleId) -> bool {
        self.state.read().expect("ledger lock poisoned").closed.contains(cycle)
    }

    /// The cycle currently accepting entries, if any.
    pub fn open_cycle(&self) -> Option<CycleId> {
        self.state.read().expect("ledger lock poisoned").open
    }

    /// Highest-seq entry of `cycle`.
    pub fn latest(&self, cycle: &CycleId) -> Result<Arc<LedgerEntry>, LedgerError> {
        let state = self.state.read().expect("ledger lock poisoned");
        let idx = *state.last_of.get(cycle).ok_or(LedgerError::UnknownCycle(*cycle))?;
        Ok(Arc::clone(&state.entries[idx]))
    }

    pub fn entries(&self) -> Vec<Arc<LedgerEntry>> {
        self.state.read().expect("ledger lock poisoned").entries.clone()
    }

    pub fn cycle_entries(&self, cycle: &CycleId) -> Vec<Arc<LedgerEntry>> {
        let state = self.state.read().expect("ledger lock poisoned");
        state.entries.iter().filter(|e| e.cycle_id == *cycle).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("ledger lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Digest of the concatenated record encoding of every entry.
    pub fn transcript_digest(&self) -> Digest {
        let state = self.state.read().expect("ledger lock poisoned");
        let bytes: Vec<u8> = state.entries.iter().flat_map(|e| encode_record(e)).collect();
        hash(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;

    fn draft(cycle: CycleId, tag: u8) -> EntryDraft {
        EntryDraft { cycle_id: cycle, ed: vec![tag; 3], ek: vec![tag; 2], em: vec![tag], sig: vec![tag; 4] }
    }

    #[test]
    fn seq_assignment_and_immutability() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ledger = Ledger::in_memory();
        let c = CycleId::random(&mut rng);
        assert_eq!(ledger.append(draft(c, 1)).unwrap(), 0);
        let first = ledger.entries()[0].clone();
        assert_eq!(ledger.append(draft(c, 2)).unwrap(), 1);
        assert_eq!(*ledger.entries()[0], *first);
        assert_eq!(ledger.len(), 2);
    }

    #[test]
    fn latest_and_unknown_cycle() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let ledger = Ledger::in_memory();
        let c = CycleId::random(&mut rng);
        for i in 0..3 {
            ledger.append(draft(c, i)).unwrap();
        }
        assert_eq!(ledger.latest(&c).unwrap().seq, 2);
        let other = CycleId::random(&mut rng);
        assert!(matches!(ledger.latest(&other), Err(LedgerError::UnknownCycle(_))));
    }

    #[test]
    fn closed_cycles_reject_appends() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ledger = Ledger::in_memory();
        let a = CycleId::random(&mut rng);
        let b = CycleId::random(&mut rng);
        ledger.append(draft(a, 0)).unwrap();
        ledger.close_cycle(a).unwrap();
        assert!(matches!(ledger.append(draft(a, 1)), Err(LedgerError::ClosedCycle(_))));
        // opening b implicitly closes nothing further but b is now open
        ledger.append(draft(b, 0)).unwrap();
        assert_eq!(ledger.open_cycle(), Some(b));
        // a new cycle supersedes b, keeping each cycle contiguous
        let c = CycleId::random(&mut rng);
        ledger.append(draft(c, 0)).unwrap();
        assert!(matches!(ledger.append(draft(b, 1)), Err(LedgerError::ClosedCycle(_))));
    }

    #[test]
    fn file_round_trip_and_transcript_stability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let c = CycleId::random(&mut rng);
        let digest = {
            let ledger = Ledger::create(&path).unwrap();
            for i in 0..4 {
                ledger.append(draft(c, i)).unwrap();
            }
            ledger.transcript_digest()
        };
        let reopened = Ledger::open(&path).unwrap();
        assert_eq!(reopened.len(), 4);
        assert_eq!(reopened.transcript_digest(), digest);
        assert!(reopened.is_closed(&c));
        let bytes = std::fs::read(&path).unwrap();
        // first record: 4-byte length, then seq field (len 8)
        assert_eq!(&bytes[4..8], &8u32.to_be_bytes());
        assert_eq!(&bytes[8..16], &0u64.to_be_bytes());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(decode_records(&[0, 0, 0, 9, 1]).is_err());
        let e = LedgerEntry { seq: 0, cycle_id: CycleId([0; 16]), ed: vec![], ek: vec![], em: vec![], sig: vec![] };
        let mut bytes = e.encode();
        bytes.push(0);
        assert!(LedgerEntry::decode(&bytes).is_err());
    }
}
