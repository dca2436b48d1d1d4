//! The note issuer: mints frozen bodies with authenticity certificates and
//! signs the genesis ownership certificate for each note.

use std::collections::BTreeMap;

use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use crate::db::CertificateDb;
use crate::error::IssuerError;
use crate::note::{body_digest, AuthenticityCert, Currency, Note, NoteBody, OwnershipCert, NOTE_BODY_VERSION};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedNote {
    pub body: NoteBody,
    pub authenticity: AuthenticityCert,
    /// Owners named by genesis certificates signed so far. More than one
    /// entry only ever happens on a dishonest issuer.
    pub genesis_owners: Vec<PublicKey>,
}

#[derive(Debug, Clone)]
pub struct IssuerState {
    keypair: KeyPair,
    next_note_number: u64,
    issued: BTreeMap<u64, IssuedNote>,
    issuance_cap: Option<u64>,
    honest: bool,
}

impl IssuerState {
    pub fn new(keypair: KeyPair) -> Self {
        Self::with_first_note_number(keypair, 1)
    }

    pub fn with_first_note_number(keypair: KeyPair, first: u64) -> Self {
        Self { keypair, next_note_number: first, issued: BTreeMap::new(), issuance_cap: None, honest: true }
    }

    /// An issuer that ignores its own cap and will sign a second genesis for
    /// a note it already issued. Downstream validation is what must stop it.
    pub fn dishonest(keypair: KeyPair, first: u64) -> Self {
        Self { honest: false, ..Self::with_first_note_number(keypair, first) }
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.issuance_cap = Some(cap);
        self
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public_key()
    }

    pub fn is_honest(&self) -> bool {
        self.honest
    }

    pub fn issuance_cap(&self) -> Option<u64> {
        self.issuance_cap
    }

    pub fn issued(&self) -> &BTreeMap<u64, IssuedNote> {
        &self.issued
    }

    pub fn mint_note(
        &mut self,
        picture: &[u8],
        amount_minor: u64,
        currency: &str,
    ) -> Result<(NoteBody, AuthenticityCert), IssuerError> {
        if amount_minor == 0 {
            return Err(IssuerError::InvalidAmount);
        }
        if let Some(cap) = self.issuance_cap {
            if self.honest && self.issued.len() as u64 >= cap {
                return Err(IssuerError::IssuanceCapExceeded { cap });
            }
        }
        let currency = Currency::new(currency)?;
        let body = NoteBody {
            version: NOTE_BODY_VERSION,
            note_number: self.next_note_number,
            amount_minor,
            currency,
            picture_digest: crypto::hash(picture),
        };
        let authenticity = AuthenticityCert {
            issuer_public_key: self.keypair.public_key(),
            body_signature: crypto::sign(body_digest(&body)?.as_bytes(), &self.keypair),
        };
        self.next_note_number += 1;
        self.issued.insert(
            body.note_number,
            IssuedNote { body: body.clone(), authenticity: authenticity.clone(), genesis_owners: Vec::new() },
        );
        Ok((body, authenticity))
    }

    /// Signs the epoch-0 certificate naming `owner`.
    pub fn issue_to(&mut self, note_number: u64, owner: PublicKey) -> Result<OwnershipCert, IssuerError> {
        let honest = self.honest;
        let entry = self.issued.get_mut(&note_number).ok_or(IssuerError::UnknownNote(note_number))?;
        if honest && !entry.genesis_owners.is_empty() {
            return Err(IssuerError::DuplicateGenesis(note_number));
        }
        let mut cert = OwnershipCert {
            note_number,
            epoch: 0,
            owner_public_key: owner,
            prev_cert_digest: Digest::ZERO,
            transfer_signature: Signature([0; 64]),
            acceptance_signature: None,
        };
        cert.transfer_signature = crypto::sign(&cert.statement(), &self.keypair);
        entry.genesis_owners.push(owner);
        Ok(cert)
    }

    /// Assembles the full note that travels to the first owner.
    pub fn package(&self, genesis: OwnershipCert) -> Result<Note, IssuerError> {
        let entry = self
            .issued
            .get(&genesis.note_number)
            .ok_or(IssuerError::UnknownNote(genesis.note_number))?;
        Ok(Note { part_a: genesis, part_b: entry.body.clone(), part_c: entry.authenticity.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub count: u64,
    pub over_cap: bool,
    pub note_numbers: Vec<u64>,
}

/// Counts the notes in `db` whose genesis certificate was signed by
/// `issuer`, and flags the issuer if that exceeds `cap`.
pub fn audit_issuance(db: &CertificateDb, issuer: &PublicKey, cap: u64) -> AuditReport {
    let note_numbers: Vec<u64> = db
        .records()
        .filter(|(_, r)| r.genesis.transfer_signed_by(issuer))
        .map(|(n, _)| n)
        .collect();
    let count = note_numbers.len() as u64;
    AuditReport { count, over_cap: count > cap, note_numbers }
}
