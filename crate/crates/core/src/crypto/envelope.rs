// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use rand::{CryptoRng, RngCore};

use super::{
    asym_decrypt, asym_encrypt, asym_encrypt_many, sym_decrypt, sym_encrypt, CryptoError, KeyPair, PublicKey, SymmetricKey,
};

/// Hybrid ciphertext: `ed` is the payload under a one-time symmetric key and
/// `ek` is that key encrypted to the recipient's public key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub ed: Vec<u8>,
    pub ek: Vec<u8>,
}

impl Envelope {
    pub fn seal<R: RngCore + CryptoRng>(
        message: &[u8],
        recipient: &PublicKey,
        rng: &mut R,
    ) -> Result<Self, CryptoError> {
        let key = SymmetricKey::generate(rng);
        Self::seal_with_key(message, &key, recipient, rng)
    }

    pub fn seal_with_key<R: RngCore + CryptoRng>(
        message: &[u8],
        key: &SymmetricKey,
        recipient: &PublicKey,
        rng: &mut R,
    ) -> Result<Self, CryptoError> {
        let ek = asym_encrypt(key.as_bytes(), recipient, rng)?;
        Ok(Envelope { ed: sym_encrypt(message, key, rng), ek })
    }

    /// Encrypts the payload once and wraps the key for every recipient.
    pub fn seal_shared<R: RngCore + CryptoRng>(
        message: &[u8],
        recipients: &[PublicKey],
        rng: &mut R,
    ) -> Result<Vec<Self>, CryptoError> {
        let key = SymmetricKey::generate(rng);
        let ed = sym_encrypt(message, &key, rng);
        let eks = asym_encrypt_many(key.as_bytes(), recipients, rng)?;
        Ok(eks.into_iter().map(|ek| Envelope { ed: ed.clone(), ek }).collect())
    }

    /// Encrypts the payload once and wraps its key under each recipient's
    /// long-term channel key.
    pub fn seal_shared_under<R: RngCore + CryptoRng>(
        message: &[u8],
        channels: &[SymmetricKey],
        rng: &mut R,
    ) -> Vec<Self> {
        let key = SymmetricKey::generate(rng);
        let ed = sym_encrypt(message, &key, rng);
        channels.iter().map(|c| Envelope { ed: ed.clone(), ek: sym_encrypt(key.as_bytes(), c, rng) }).collect()
    }

    pub fn open_under(&self, channel: &SymmetricKey) -> Result<Vec<u8>, CryptoError> {
        let key = SymmetricKey::from_slice(&sym_decrypt(&self.ek, channel).map_err(|_| CryptoError::DecryptionFailure)?)
            .map_err(|_| CryptoError::DecryptionFailure)?;
        sym_decrypt(&self.ed, &key).map_err(|_| CryptoError::DecryptionFailure)
    }

    /// Unwraps the payload key with `keys`; fails with `DecryptionFailure` if
    /// the envelope was addressed to someone else.
    pub fn open(&self, keys: &KeyPair) -> Result<Vec<u8>, CryptoError> {
        let key = SymmetricKey::from_slice(&asym_decrypt(&self.ek, keys)?)
            .map_err(|_| CryptoError::DecryptionFailure)?;
        sym_decrypt(&self.ed, &key).map_err(|_| CryptoError::DecryptionFailure)
    }
}
