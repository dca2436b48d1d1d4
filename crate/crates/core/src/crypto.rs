//! Signature and hash primitives.
//!
//! The whole crate signs with Ed25519 (RFC 8032, deterministic) and hashes
//! with SHA-256. Nothing outside this module touches `ed25519_dalek` or
//! `sha2` directly, so the scheme can be swapped here without changing
//! any serialized layout other than key and signature bytes.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest as _, Sha256};

use crate::error::CryptoError;

pub const SEED_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const DIGEST_LEN: usize = 32;

/// A 32-byte Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Encoding(format!("public key must be 32 bytes, got {}", bytes.len())))?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A 64-byte signature value.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SIGNATURE_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Encoding(format!("signature must be 64 bytes, got {}", bytes.len())))?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; DIGEST_LEN]
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// A signing identity. The secret half is never serialized and is
/// redacted from `Debug` output.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    /// Draws a fresh seed from the operating system. Simulations never
    /// call this; they derive seeds with [`generate_keypair`].
    pub fn from_entropy() -> Self {
        let mut seed = [0u8; SEED_LEN];
        rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut seed);
        Self::from_seed(&seed)
    }

    pub fn from_seed(seed: &[u8; SEED_LEN]) -> Self {
        let signing = SigningKey::from_bytes(seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        Self { signing, public }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public)
            .field("private_key", &"<redacted>")
            .finish()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public && self.signing.to_bytes() == other.signing.to_bytes()
    }
}

impl Eq for KeyPair {}

/// Derives a keypair from exactly 32 bytes of seed material.
pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: &[u8; SEED_LEN] = seed
        .try_into()
        .map_err(|_| CryptoError::SeedLength(seed.len()))?;
    Ok(KeyPair::from_seed(seed))
}

pub fn sign(message: &[u8], key: &KeyPair) -> Signature {
    Signature(key.signing.sign(message).to_bytes())
}

/// Checks `sig` over `message`. Malformed key or signature lengths are an
/// error; a well-formed key that is not a valid curve point simply fails
/// verification.
pub fn verify(message: &[u8], sig: &[u8], public_key: &[u8]) -> Result<bool, CryptoError> {
    let pk = PublicKey::from_slice(public_key)?;
    let sig = Signature::from_slice(sig)?;
    Ok(verify_typed(message, &sig, &pk))
}

/// Infallible form of [`verify`] for already-typed values.
pub fn verify_typed(message: &[u8], sig: &Signature, public_key: &PublicKey) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&public_key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(message, &sig).is_ok()
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hashes the concatenation of `parts` without allocating.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Domain-separated 32-byte seed derivation used for reproducible
/// identities: `SHA-256(label || 0x00 || context)`.
pub fn derive_seed(label: &str, context: &[u8]) -> [u8; SEED_LEN] {
    hash_parts(&[label.as_bytes(), &[0u8], context]).0
}
