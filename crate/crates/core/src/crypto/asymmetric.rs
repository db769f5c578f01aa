// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use x25519_dalek::{EphemeralSecret, PublicKey as X25519Public, StaticSecret};

use super::symmetric::{sym_decrypt, sym_encrypt, SymmetricKey};
use super::{hash_parts, CryptoError};

/// Largest plaintext accepted by [`asym_encrypt`]. The scheme carries wrapped
/// symmetric keys and routing messages; bulk data goes through an
/// [`Envelope`](super::Envelope).
pub const MAX_ASYM_PAYLOAD: usize = 1024;

const X25519_TAG: &[u8] = b"bioledger/keypair/x25519";
const ED25519_TAG: &[u8] = b"bioledger/keypair/ed25519";
const ECIES_INFO: &[u8] = b"bioledger/ecies/v1";
const CHANNEL_INFO: &[u8] = b"bioledger/channel/v1";

/// Public half of a [`KeyPair`]: an X25519 key for encryption and an Ed25519
/// key for signature verification.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub enc: [u8; 32],
    pub verify: [u8; 32],
}

impl PublicKey {
    pub const LEN: usize = 64;

    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.enc);
        out[32..].copy_from_slice(&self.verify);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != Self::LEN {
            return Err(CryptoError::MalformedKey);
        }
        let mut enc = [0u8; 32];
        let mut verify = [0u8; 32];
        enc.copy_from_slice(&bytes[..32]);
        verify.copy_from_slice(&bytes[32..]);
        Ok(PublicKey { enc, verify })
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let hex: String = self.verify[..4].iter().map(|b| format!("{b:02x}")).collect();
        write!(f, "PublicKey({hex}..)")
    }
}

/// Both private keys are derived from one 32-byte seed, so a key pair can be
/// split into shards and rebuilt from the seed alone.
#[derive(Clone)]
pub struct KeyPair {
    seed: [u8; 32],
    enc_secret: StaticSecret,
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        let enc_secret = StaticSecret::from(hash_parts(X25519_TAG, &[&seed]).0);
        let signing = SigningKey::from_bytes(&hash_parts(ED25519_TAG, &[&seed]).0);
        let public = PublicKey {
            enc: X25519Public::from(&enc_secret).to_bytes(),
            verify: signing.verifying_key().to_bytes(),
        };
        KeyPair { seed, enc_secret, signing, public }
    }

    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// Long-term key shared with `peer` by static X25519 agreement. Both
    /// sides derive the same key.
    pub fn agree(&self, peer: &PublicKey) -> Result<SymmetricKey, CryptoError> {
        let shared = self.enc_secret.diffie_hellman(&X25519Public::from(peer.enc));
        if !shared.was_contributory() {
            return Err(CryptoError::MalformedKey);
        }
        let (lo, hi) = if self.public.enc <= peer.enc { (&self.public.enc, &peer.enc) } else { (&peer.enc, &self.public.enc) };
        let hk = Hkdf::<Sha256>::new(Some(CHANNEL_INFO), shared.as_bytes());
        let mut okm = [0u8; 32];
        hk.expand(&[lo.as_slice(), hi.as_slice()].concat(), &mut okm)
            .expect("32 bytes is a valid HKDF-SHA256 output length");
        Ok(SymmetricKey(okm))
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

fn derive_wrap_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> SymmetricKey {
    let hk = Hkdf::<Sha256>::new(Some(ECIES_INFO), shared);
    let mut okm = [0u8; 32];
    let info = [ephemeral.as_slice(), recipient.as_slice()].concat();
    hk.expand(&info, &mut okm).expect("32 bytes is a valid HKDF-SHA256 output length");
    SymmetricKey(okm)
}

/// Output layout: `ephemeral X25519 public (32) || AES-GCM ciphertext`.
pub fn asym_encrypt<R: RngCore + CryptoRng>(
    message: &[u8],
    recipient: &PublicKey,
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    if message.len() > MAX_ASYM_PAYLOAD {
        return Err(CryptoError::PayloadTooLarge { len: message.len(), max: MAX_ASYM_PAYLOAD });
    }
    let ephemeral = EphemeralSecret::random_from_rng(&mut *rng);
    let ephemeral_public = X25519Public::from(&ephemeral).to_bytes();
    let shared = ephemeral.diffie_hellman(&X25519Public::from(recipient.enc));
    let key = derive_wrap_key(shared.as_bytes(), &ephemeral_public, &recipient.enc);
    let mut out = ephemeral_public.to_vec();
    out.extend(sym_encrypt(message, &key, rng));
    Ok(out)
}

/// Encrypts `message` to every recipient under one ephemeral key. Each output
/// has the same layout as [`asym_encrypt`]'s and opens with [`asym_decrypt`].
pub fn asym_encrypt_many<R: RngCore + CryptoRng>(
    message: &[u8],
    recipients: &[PublicKey],
    rng: &mut R,
) -> Result<Vec<Vec<u8>>, CryptoError> {
    if message.len() > MAX_ASYM_PAYLOAD {
        return Err(CryptoError::PayloadTooLarge { len: message.len(), max: MAX_ASYM_PAYLOAD });
    }
    let ephemeral = StaticSecret::random_from_rng(&mut *rng);
    let ephemeral_public = X25519Public::from(&ephemeral).to_bytes();
    Ok(recipients
        .iter()
        .map(|r| {
            let shared = ephemeral.diffie_hellman(&X25519Public::from(r.enc));
            let key = derive_wrap_key(shared.as_bytes(), &ephemeral_public, &r.enc);
            let mut out = ephemeral_public.to_vec();
            out.extend(sym_encrypt(message, &key, rng));
            out
        })
        .collect())
}

pub fn asym_decrypt(ciphertext: &[u8], keys: &KeyPair) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < 32 {
        return Err(CryptoError::DecryptionFailure);
    }
    let (eph, body) = ciphertext.split_at(32);
    let eph: [u8; 32] = eph.try_into().expect("split at 32");
    let shared = keys.enc_secret.diffie_hellman(&X25519Public::from(eph));
    if !shared.was_contributory() {
        return Err(CryptoError::DecryptionFailure);
    }
    let key = derive_wrap_key(shared.as_bytes(), &eph, &keys.public.enc);
    sym_decrypt(body, &key).map_err(|_| CryptoError::DecryptionFailure)
}

/// Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Signature(..)")
    }
}

pub fn sign(keys: &KeyPair, message: &[u8]) -> Signature {
    Signature(keys.signing.sign(message).to_bytes())
}

pub fn verify(public: &PublicKey, signature: &Signature, message: &[u8]) -> bool {
    verify_bytes(public, &signature.0, message)
}

/// Like [`verify`] but over raw bytes as read from a ledger entry; any length
/// other than 64 is rejected.
pub fn verify_bytes(public: &PublicKey, signature: &[u8], message: &[u8]) -> bool {
    let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&public.verify) else {
        return false;
    };
    vk.verify(message, &sig).is_ok()
}
