//! The three-part note and its canonical encodings.
//!
//! A [`Note`] travels as `part_a || part_b || part_c`:
//!
//! * [`OwnershipCert`] (part A) names the current owner and is replaced at
//!   every transfer.
//! * [`NoteBody`] (part B) is frozen at minting: picture digest, number,
//!   amount.
//! * [`AuthenticityCert`] (part C) is the issuer's signature over the hash
//!   of the encoded body.
//!
//! Both encodings below are fixed-width, big-endian and stable; the test
//! fixtures under `tests/fixtures` pin them byte for byte.

use std::fmt;

use crate::crypto::{self, Digest, PublicKey, Signature};
use crate::error::EncodingError;

pub const NOTE_BODY_MAGIC: &[u8; 4] = b"EB01";
pub const STATEMENT_MAGIC: &[u8; 4] = b"EA01";
pub const NOTE_BODY_VERSION: u8 = 1;
pub const NOTE_BODY_LEN: usize = 56;
pub const STATEMENT_LEN: usize = 84;

/// Three ASCII uppercase letters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Currency([u8; 3]);

impl Currency {
    pub fn new(code: &str) -> Result<Self, EncodingError> {
        let bytes: [u8; 3] = code
            .as_bytes()
            .try_into()
            .map_err(|_| EncodingError(format!("currency `{code}` is not 3 letters")))?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: [u8; 3]) -> Result<Self, EncodingError> {
        if bytes.iter().all(u8::is_ascii_uppercase) {
            Ok(Self(bytes))
        } else {
            Err(EncodingError(format!(
                "currency bytes {:02x?} are not ASCII uppercase",
                bytes
            )))
        }
    }

    /// Skips validation. Only useful for constructing malformed bodies.
    pub fn from_bytes_unchecked(bytes: [u8; 3]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 3] {
        &self.0
    }
}

impl fmt::Debug for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Currency({})", String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

/// Part B. Never mutated after minting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteBody {
    pub version: u8,
    pub note_number: u64,
    pub amount_minor: u64,
    pub currency: Currency,
    pub picture_digest: Digest,
}

/// Part C.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticityCert {
    pub issuer_public_key: PublicKey,
    pub body_signature: Signature,
}

/// Part A: "`owner_public_key` is the owner of note `note_number`", bound to
/// its chain position by `epoch` and `prev_cert_digest`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnershipCert {
    pub note_number: u64,
    pub epoch: u64,
    pub owner_public_key: PublicKey,
    pub prev_cert_digest: Digest,
    /// By the previous owner, or the issuer at epoch 0.
    pub transfer_signature: Signature,
    /// By `owner_public_key`, once the new owner accepts.
    pub acceptance_signature: Option<Signature>,
}

impl OwnershipCert {
    pub fn is_genesis(&self) -> bool {
        self.epoch == 0
    }

    pub fn statement(&self) -> [u8; STATEMENT_LEN] {
        encode_ownership_statement(self)
    }

    pub fn digest(&self) -> Digest {
        cert_digest(self)
    }

    pub fn transfer_signed_by(&self, key: &PublicKey) -> bool {
        crypto::verify_typed(&self.statement(), &self.transfer_signature, key)
    }

    /// `None` when absent, otherwise whether it verifies under the named owner.
    pub fn acceptance_valid(&self) -> Option<bool> {
        self.acceptance_signature
            .map(|sig| crypto::verify_typed(&self.statement(), &sig, &self.owner_public_key))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub part_a: OwnershipCert,
    pub part_b: NoteBody,
    pub part_c: AuthenticityCert,
}

impl Note {
    pub fn note_number(&self) -> u64 {
        self.part_b.note_number
    }

    pub fn is_consistent(&self) -> bool {
        self.part_a.note_number == self.part_b.note_number
    }
}

pub fn encode_note_body(body: &NoteBody) -> Result<[u8; NOTE_BODY_LEN], EncodingError> {
    Currency::from_bytes(body.currency.0)?;
    let mut out = [0u8; NOTE_BODY_LEN];
    out[0..4].copy_from_slice(NOTE_BODY_MAGIC);
    out[4] = body.version;
    out[5..13].copy_from_slice(&body.note_number.to_be_bytes());
    out[13..21].copy_from_slice(&body.amount_minor.to_be_bytes());
    out[21..24].copy_from_slice(body.currency.as_bytes());
    out[24..56].copy_from_slice(body.picture_digest.as_bytes());
    Ok(out)
}

/// The bytes both the transfer and acceptance signatures cover. Signature
/// fields are excluded.
pub fn encode_ownership_statement(cert: &OwnershipCert) -> [u8; STATEMENT_LEN] {
    let mut out = [0u8; STATEMENT_LEN];
    out[0..4].copy_from_slice(STATEMENT_MAGIC);
    out[4..12].copy_from_slice(&cert.note_number.to_be_bytes());
    out[12..20].copy_from_slice(&cert.epoch.to_be_bytes());
    out[20..52].copy_from_slice(cert.owner_public_key.as_bytes());
    out[52..84].copy_from_slice(cert.prev_cert_digest.as_bytes());
    out
}

/// Chain link value: `hash(statement || transfer_signature)`.
pub fn cert_digest(cert: &OwnershipCert) -> Digest {
    crypto::hash_parts(&[&encode_ownership_statement(cert), cert.transfer_signature.as_bytes()])
}

pub fn body_digest(body: &NoteBody) -> Result<Digest, EncodingError> {
    Ok(crypto::hash(&encode_note_body(body)?))
}

pub fn verify_authenticity(note: &Note, trusted_issuer: &PublicKey) -> bool {
    if note.part_c.issuer_public_key != *trusted_issuer {
        return false;
    }
    let Ok(digest) = body_digest(&note.part_b) else {
        return false;
    };
    crypto::verify_typed(digest.as_bytes(), &note.part_c.body_signature, trusted_issuer)
}

/// Whether `next` is the certificate `prev`'s owner signed for the very next
/// chain position.
pub fn verify_transfer_link(prev: &OwnershipCert, next: &OwnershipCert) -> bool {
    next.note_number == prev.note_number
        && prev.epoch.checked_add(1) == Some(next.epoch)
        && next.prev_cert_digest == cert_digest(prev)
        && next.transfer_signed_by(&prev.owner_public_key)
}

/// Structural and issuer checks for an epoch-0 certificate.
pub fn verify_genesis(cert: &OwnershipCert, issuer: &PublicKey) -> bool {
    cert.epoch == 0 && cert.prev_cert_digest.is_zero() && cert.transfer_signed_by(issuer)
}
