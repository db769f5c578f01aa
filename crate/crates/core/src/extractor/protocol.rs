// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

//! Query-cycle protocol between the notary and the extractor blocks.
//!
//! Every step appends `(ED, EK, EM, S)` to the ledger:
//!
//! * `ED`: stage input/output under a per-message key derived from the
//!   writer's AES key,
//! * `EK`: that key encrypted to the next actor,
//! * `EM`: `START_MESSAGE || cycle_id` encrypted to the next actor,
//! * `S`: the writer's signature over `UNIVERSAL_MESSAGE || cycle_id ||
//!   H(ED, EK, EM)`.
//!
//! A cycle on a chain of `k` stages produces `2k + 2` entries: the capture,
//! one notary/block pair per stage, and the final handoff to the matcher root.

use rand::{CryptoRng, RngCore};

use super::chain::{ChainStatus, ExtractorBlock, ExtractorChain};
use super::stage::{apply_stage, decode_vector, encode_vector};
use super::ExtractorError;
use crate::crypto::{
    asym_decrypt, asym_encrypt, hash_parts, sign, sym_decrypt, sym_encrypt, verify_bytes, Envelope, KeyPair,
    PublicKey, SymmetricKey,
};
use crate::ledger::{signing_payload, CycleId, EntryDraft, Ledger, LedgerEntry};

pub const START_MESSAGE: &[u8] = b"bioledger/start";
pub const UNIVERSAL_MESSAGE: &[u8] = b"bioledger/notarized";
const SESSION_TAG: &[u8] = b"bioledger/session-key";

fn start_token(cycle: &CycleId) -> Vec<u8> {
    [START_MESSAGE, &cycle.0].concat()
}

/// One-time payload key derived from a long-term AES key.
fn session_key(base: &SymmetricKey, cycle: &CycleId, step: u64) -> SymmetricKey {
    SymmetricKey(hash_parts(SESSION_TAG, &[base.as_bytes(), &cycle.0, &step.to_be_bytes()]).0)
}

/// Encrypted feature vector handed from the notary to the matcher root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedFeature {
    pub cycle_id: CycleId,
    pub envelope: Envelope,
    pub em: Vec<u8>,
    pub sig: Vec<u8>,
}

impl SealedFeature {
    fn from_entry(entry: &LedgerEntry) -> Self {
        SealedFeature {
            cycle_id: entry.cycle_id,
            envelope: Envelope { ed: entry.ed.clone(), ek: entry.ek.clone() },
            em: entry.em.clone(),
            sig: entry.sig.clone(),
        }
    }

    /// Checks the notary's signature and that `EM` carries the start token
    /// for `recipient`, then decrypts the feature vector.
    pub fn open(&self, recipient: &KeyPair, notary: &PublicKey) -> Result<Vec<f64>, ExtractorError> {
        let payload = signing_payload(UNIVERSAL_MESSAGE, &self.cycle_id, &self.envelope.ed, &self.envelope.ek, &self.em);
        if !verify_bytes(notary, &self.sig, &payload) {
            return Err(ExtractorError::SignatureRejected);
        }
        if asym_decrypt(&self.em, recipient)? != start_token(&self.cycle_id) {
            return Err(ExtractorError::NotMyTurn);
        }
        decode_vector(&self.envelope.open(recipient)?)
    }
}

/// Writes one protocol step addressed to `recipient`.
#[allow(clippy::too_many_arguments)]
fn send_step<R: RngCore + CryptoRng>(
    ledger: &Ledger,
    cycle: CycleId,
    writer: &KeyPair,
    writer_sym: &SymmetricKey,
    payload: &[u8],
    recipient: &PublicKey,
    rng: &mut R,
) -> Result<LedgerEntry, ExtractorError> {
    let key = session_key(writer_sym, &cycle, ledger.len() as u64);
    let ed = sym_encrypt(payload, &key, rng);
    let ek = asym_encrypt(key.as_bytes(), recipient, rng)?;
    let em = asym_encrypt(&start_token(&cycle), recipient, rng)?;
    let sig = sign(writer, &signing_payload(UNIVERSAL_MESSAGE, &cycle, &ed, &ek, &em)).0.to_vec();
    let draft = EntryDraft { cycle_id: cycle, ed, ek, em, sig };
    let seq = ledger.append(draft.clone())?;
    Ok(LedgerEntry { seq, cycle_id: cycle, ed: draft.ed, ek: draft.ek, em: draft.em, sig: draft.sig })
}

/// Receiver-side checks: `EM` must decrypt to this cycle's start token under
/// `keys` (otherwise the entry is for someone else) and `S` must verify under
/// `expected_signer`. Returns the decrypted payload.
fn receive_step(entry: &LedgerEntry, keys: &KeyPair, expected_signer: &PublicKey) -> Result<Vec<u8>, ExtractorError> {
    match asym_decrypt(&entry.em, keys) {
        Ok(m) if m == start_token(&entry.cycle_id) => {}
        _ => return Err(ExtractorError::NotMyTurn),
    }
    if !verify_bytes(expected_signer, &entry.sig, &entry.signing_payload(UNIVERSAL_MESSAGE)) {
        return Err(ExtractorError::SignatureRejected);
    }
    let key = SymmetricKey::from_slice(&asym_decrypt(&entry.ek, keys)?)?;
    Ok(sym_decrypt(&entry.ed, &key)?)
}

/// Starts a query cycle from a capture sealed to the notary's public key.
/// Appends the capture entry and the notary's first step, addressed to the
/// first block on the route.
pub fn notary_begin_cycle<R: RngCore + CryptoRng>(
    chain: &ExtractorChain,
    ledger: &Ledger,
    captured: &Envelope,
    rng: &mut R,
) -> Result<LedgerEntry, ExtractorError> {
    let notary = chain.notary();
    let raw = captured.open(&notary.keys)?;
    let first = notary.route.first().ok_or(ExtractorError::EmptyChain)?;
    let cycle = CycleId::random(rng);
    ledger.append(EntryDraft {
        cycle_id: cycle,
        ed: captured.ed.clone(),
        ek: captured.ek.clone(),
        em: Vec::new(),
        sig: Vec::new(),
    })?;
    send_step(ledger, cycle, &notary.keys, &notary.sym_key, &raw, first, rng)
}

/// A block inspects the newest entry of the open cycle and acts on it if it
/// is the addressee and the notary signed it.
pub fn block_handle_update<R: RngCore + CryptoRng>(
    block: &ExtractorBlock,
    ledger: &Ledger,
    rng: &mut R,
) -> Result<LedgerEntry, ExtractorError> {
    let cycle = ledger.open_cycle().ok_or(ExtractorError::NotMyTurn)?;
    let entry = ledger.latest(&cycle)?;
    let input = decode_vector(&receive_step(&entry, &block.keys, &block.notary_public)?)?;
    let output = apply_stage(&input, &block.params)?;
    send_step(ledger, cycle, &block.keys, &block.sym_key, &encode_vector(&output), &block.notary_public, rng)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NotaryStep {
    /// Routed the intermediate output to the next block.
    Forwarded(LedgerEntry),
    /// Sealed the final feature vector to the matcher root and closed the cycle.
    Handoff(SealedFeature),
}

/// The notary picks up a block's output. The expected sender is inferred from
/// the cycle's position: after `2k + 3` entries the last one must come from
/// route block `k`.
pub fn notary_handle_update<R: RngCore + CryptoRng>(
    chain: &ExtractorChain,
    ledger: &Ledger,
    rng: &mut R,
) -> Result<NotaryStep, ExtractorError> {
    let notary = chain.notary();
    let cycle = ledger.open_cycle().ok_or(ExtractorError::NotMyTurn)?;
    let count = ledger.cycle_entries(&cycle).len();
    if count < 3 || count.is_multiple_of(2) {
        return Err(ExtractorError::NotMyTurn);
    }
    let step = (count - 3) / 2;
    let sender = notary.route.get(step).ok_or(ExtractorError::NotMyTurn)?;
    let entry = ledger.latest(&cycle)?;
    let payload = receive_step(&entry, &notary.keys, sender)?;
    match notary.route.get(step + 1) {
        Some(next) => Ok(NotaryStep::Forwarded(send_step(
            ledger,
            cycle,
            &notary.keys,
            &notary.sym_key,
            &payload,
            next,
            rng,
        )?)),
        None => {
            let entry = send_step(
                ledger,
                cycle,
                &notary.keys,
                &notary.sym_key,
                &payload,
                &notary.matcher_root_public,
                rng,
            )?;
            ledger.close_cycle(cycle)?;
            Ok(NotaryStep::Handoff(SealedFeature::from_entry(&entry)))
        }
    }
}

/// Seals a raw capture to the notary, as a sensor would.
pub fn seal_capture<R: RngCore + CryptoRng>(
    raw_input: &[f64],
    notary_public: &PublicKey,
    rng: &mut R,
) -> Result<Envelope, ExtractorError> {
    Ok(Envelope::seal(&encode_vector(raw_input), notary_public, rng)?)
}

/// Drives a full query cycle: verifies the chain, seals the capture, then
/// alternates between polling every block and letting the notary route,
/// until the notary hands the feature vector to the matcher root.
pub fn run_query_cycle<R: RngCore + CryptoRng>(
    chain: &ExtractorChain,
    ledger: &Ledger,
    raw_input: &[f64],
    rng: &mut R,
) -> Result<SealedFeature, ExtractorError> {
    match chain.verify_chain()? {
        ChainStatus::Intact => {}
        ChainStatus::Tampered { first_index } => return Err(ExtractorError::IntegrityFailure { first_index }),
        ChainStatus::NotaryMismatch => return Err(ExtractorError::IntegrityFailure { first_index: chain.len() }),
    }
    let captured = seal_capture(raw_input, &chain.notary().keys.public(), rng)?;
    let first = notary_begin_cycle(chain, ledger, &captured, rng)?;
    let cycle = first.cycle_id;
    let abort = |e: ExtractorError| {
        let _ = ledger.close_cycle(cycle);
        e
    };
    loop {
        let mut acted = false;
        for block in chain.blocks() {
            match block_handle_update(block, ledger, rng) {
                Ok(_) => {
                    acted = true;
                    break;
                }
                Err(ExtractorError::NotMyTurn) => continue,
                Err(e) => return Err(abort(e)),
            }
        }
        if !acted {
            return Err(abort(ExtractorError::Stalled));
        }
        match notary_handle_update(chain, ledger, rng).map_err(abort)? {
            NotaryStep::Forwarded(_) => continue,
            NotaryStep::Handoff(sealed) => return Ok(sealed),
        }
    }
}
