//! A user's agent: holds identities and notes, checks incoming notes
//! against the local certificate database, signs outgoing transfers and
//! countersigns accepted ones.
//!
//! A payer keeps a transferred note until its own database shows the new
//! owner; [`WalletState::sync`] drops it then. Until that point a transfer
//! certificate that was never broadcast is void and the payer may sign
//! another one.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature, SEED_LEN};
use crate::db::{quorum_owner_check, CertificateDb};
use crate::error::WalletError;
use crate::note::{verify_authenticity, verify_genesis, verify_transfer_link, Note, OwnershipCert};

const IDENTITY_LABEL: &str = "owncash/wallet-identity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum WalletReject {
    #[error("authenticity certificate does not verify")]
    BadAuthenticity,
    #[error("genesis certificate not signed by the issuer")]
    BadGenesisSignature,
    #[error("certificate names a key this wallet does not hold")]
    NotAddressedToMe,
    #[error("payer is not the current owner in the local database")]
    PayerNotCurrentOwner,
    #[error("transfer does not extend the current certificate")]
    BadChainLink,
    #[error("peer databases do not confirm the payer")]
    QuorumDisagreement,
}

impl WalletReject {
    pub fn name(&self) -> &'static str {
        match self {
            WalletReject::BadAuthenticity => "BadAuthenticity",
            WalletReject::BadGenesisSignature => "BadGenesisSignature",
            WalletReject::NotAddressedToMe => "NotAddressedToMe",
            WalletReject::PayerNotCurrentOwner => "PayerNotCurrentOwner",
            WalletReject::BadChainLink => "BadChainLink",
            WalletReject::QuorumDisagreement => "QuorumDisagreement",
        }
    }
}

/// Peer databases a merchant consults before finalizing a payment.
#[derive(Debug, Clone, Copy)]
pub struct QuorumCheck<'a> {
    pub peers: &'a [&'a CertificateDb],
    pub threshold: usize,
}

#[derive(Debug, Clone)]
pub struct WalletState {
    master_seed: [u8; SEED_LEN],
    identities: Vec<KeyPair>,
    holdings: BTreeMap<u64, Note>,
    trusted_issuer: PublicKey,
    signed_transfers: BTreeSet<Digest>,
}

impl WalletState {
    /// Identities are derived from `master_seed`, so equal seeds give equal
    /// wallets.
    pub fn new(trusted_issuer: PublicKey, master_seed: [u8; SEED_LEN]) -> Self {
        let mut w = Self {
            master_seed,
            identities: Vec::new(),
            holdings: BTreeMap::new(),
            trusted_issuer,
            signed_transfers: BTreeSet::new(),
        };
        w.new_identity();
        w
    }

    pub fn from_entropy(trusted_issuer: PublicKey) -> Self {
        let mut seed = [0u8; SEED_LEN];
        rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut seed);
        Self::new(trusted_issuer, seed)
    }

    pub fn trusted_issuer(&self) -> PublicKey {
        self.trusted_issuer
    }

    pub fn active_key(&self) -> PublicKey {
        self.identities.last().expect("wallet always has an identity").public_key()
    }

    pub fn identity_keys(&self) -> impl Iterator<Item = PublicKey> + '_ {
        self.identities.iter().map(KeyPair::public_key)
    }

    pub fn holds_key(&self, key: &PublicKey) -> bool {
        self.keypair_for(key).is_some()
    }

    fn keypair_for(&self, key: &PublicKey) -> Option<&KeyPair> {
        self.identities.iter().find(|k| k.public_key() == *key)
    }

    pub fn holdings(&self) -> &BTreeMap<u64, Note> {
        &self.holdings
    }

    pub fn holding(&self, note_number: u64) -> Option<&Note> {
        self.holdings.get(&note_number)
    }

    /// Digests of every transfer certificate this wallet has signed as payer.
    pub fn signed_transfers(&self) -> &BTreeSet<Digest> {
        &self.signed_transfers
    }

    /// Appends a fresh identity and returns its key.
    pub fn new_identity(&mut self) -> PublicKey {
        let mut ctx = Vec::with_capacity(SEED_LEN + 8);
        ctx.extend_from_slice(&self.master_seed);
        ctx.extend_from_slice(&(self.identities.len() as u64).to_be_bytes());
        let kp = KeyPair::from_seed(&crypto::derive_seed(IDENTITY_LABEL, &ctx));
        let pk = kp.public_key();
        self.identities.push(kp);
        pk
    }

    fn countersign(&self, cert: &mut OwnershipCert) -> Result<(), WalletReject> {
        let kp = self.keypair_for(&cert.owner_public_key).ok_or(WalletReject::NotAddressedToMe)?;
        cert.acceptance_signature = Some(crypto::sign(&cert.statement(), kp));
        Ok(())
    }

    /// Takes delivery of a freshly issued note. On success the note is held
    /// and the countersigned genesis certificate is returned for broadcast.
    pub fn receive_issued(&mut self, note: Note) -> Result<OwnershipCert, WalletReject> {
        if !verify_authenticity(&note, &self.trusted_issuer) {
            return Err(WalletReject::BadAuthenticity);
        }
        if !note.is_consistent() || !verify_genesis(&note.part_a, &self.trusted_issuer) {
            return Err(WalletReject::BadGenesisSignature);
        }
        let mut note = note;
        self.countersign(&mut note.part_a)?;
        let cert = note.part_a.clone();
        self.holdings.insert(note.note_number(), note);
        Ok(cert)
    }

    /// Signs a new part A handing `note_number` to `payee`. The note stays in
    /// holdings.
    pub fn make_transfer(&mut self, note_number: u64, payee: PublicKey, db: &CertificateDb) -> Result<Note, WalletError> {
        let holding = self.holdings.get(&note_number).ok_or(WalletError::UnknownHolding(note_number))?;
        let current = db.current(note_number).ok_or(WalletError::NotOwnerLocally(note_number))?;
        let signer = self
            .keypair_for(&current.owner_public_key)
            .ok_or(WalletError::NotOwnerLocally(note_number))?;

        let mut part_a = OwnershipCert {
            note_number,
            epoch: current.epoch + 1,
            owner_public_key: payee,
            prev_cert_digest: current.digest(),
            transfer_signature: Signature([0; 64]),
            acceptance_signature: None,
        };
        part_a.transfer_signature = crypto::sign(&part_a.statement(), signer);
        let note = Note { part_a, part_b: holding.part_b.clone(), part_c: holding.part_c.clone() };
        self.signed_transfers.insert(note.part_a.digest());
        Ok(note)
    }

    fn check_transfer(&self, note: &Note, expected_payer: &PublicKey, db: &CertificateDb) -> Result<(), WalletReject> {
        if !verify_authenticity(note, &self.trusted_issuer) {
            return Err(WalletReject::BadAuthenticity);
        }
        let current = db.current(note.note_number()).ok_or(WalletReject::PayerNotCurrentOwner)?;
        if current.owner_public_key != *expected_payer {
            return Err(WalletReject::PayerNotCurrentOwner);
        }
        if !note.is_consistent() || !verify_transfer_link(current, &note.part_a) {
            return Err(WalletReject::BadChainLink);
        }
        if !self.holds_key(&note.part_a.owner_public_key) {
            return Err(WalletReject::NotAddressedToMe);
        }
        Ok(())
    }

    /// Merchant side of a payment. On success the note is held and the
    /// countersigned certificate is returned for broadcast.
    pub fn accept_transfer(
        &mut self,
        note: Note,
        expected_payer: &PublicKey,
        db: &CertificateDb,
    ) -> Result<OwnershipCert, WalletReject> {
        self.accept_transfer_checked(note, expected_payer, db, None)
    }

    /// As [`accept_transfer`](Self::accept_transfer), additionally refusing
    /// unless enough peer databases agree the payer owns the note.
    pub fn accept_transfer_checked(
        &mut self,
        note: Note,
        expected_payer: &PublicKey,
        db: &CertificateDb,
        quorum: Option<QuorumCheck<'_>>,
    ) -> Result<OwnershipCert, WalletReject> {
        self.check_transfer(&note, expected_payer, db)?;
        if let Some(q) = quorum {
            if !quorum_owner_check(q.peers, note.note_number(), expected_payer, q.threshold) {
                return Err(WalletReject::QuorumDisagreement);
            }
        }
        let mut note = note;
        self.countersign(&mut note.part_a)?;
        let cert = note.part_a.clone();
        self.holdings.insert(note.note_number(), note);
        Ok(cert)
    }

    /// Moves `note_number` to a freshly derived key. Returns the new key and
    /// the self-accepted note whose part A must be broadcast.
    pub fn rotate_identity(&mut self, note_number: u64, db: &CertificateDb) -> Result<(PublicKey, Note), WalletError> {
        if !self.holdings.contains_key(&note_number) {
            return Err(WalletError::UnknownHolding(note_number));
        }
        let owner = db.current_owner(note_number).ok_or(WalletError::NotOwnerLocally(note_number))?;
        if !self.holds_key(&owner) {
            return Err(WalletError::NotOwnerLocally(note_number));
        }
        let fresh = self.new_identity();
        let mut note = self.make_transfer(note_number, fresh, db)?;
        self.countersign(&mut note.part_a).expect("fresh identity is held");
        self.holdings.insert(note_number, note.clone());
        Ok((fresh, note))
    }

    /// Reconciles holdings with the local database: notes now owned by
    /// someone else are dropped, and held part A certificates are replaced
    /// by newer ones naming one of our keys.
    pub fn sync(&mut self, db: &CertificateDb) {
        let identities = &self.identities;
        self.holdings.retain(|n, note| match db.current(*n) {
            Some(current) if identities.iter().any(|k| k.public_key() == current.owner_public_key) => {
                if current.epoch > note.part_a.epoch
                    || (current.epoch == note.part_a.epoch && current.digest() == note.part_a.digest())
                {
                    note.part_a = current.clone();
                }
                true
            }
            Some(_) => false,
            // Not yet recorded locally (e.g. issued but not broadcast).
            None => true,
        });
    }
}
