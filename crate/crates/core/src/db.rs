//! Per-node certificate database.
//!
//! Each node keeps, per note number, the ownership certificate it currently
//! believes in. A broadcast certificate is applied only if it extends that
//! record by exactly one link signed by the recorded owner; the first valid
//! certificate for a chain position wins and every later competitor for the
//! same position is rejected.
//!
//! The export format mirrors the "three small lines" record shape:
//!
//! ```text
//! OWNCASHDB v1
//! N=<decimal> OWNER=<hex64> EPOCH=<decimal> PREV=<hex64>
//! XFER=<hex128>
//! ACCEPT=<hex128 or ->
//! ```
//!
//! Records are sorted by note number. A note may contribute several blocks,
//! oldest first: the full chain when history is retained, otherwise the
//! genesis certificate followed by the current one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::crypto::{Digest, PublicKey, Signature};
use crate::error::ParseError;
use crate::note::{cert_digest, verify_genesis, OwnershipCert};

pub const EXPORT_HEADER: &str = "OWNCASHDB v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum Rejection {
    #[error("note already has a genesis certificate")]
    DuplicateGenesis,
    #[error("no record for note")]
    UnknownNote,
    #[error("transfer not signed by the current owner")]
    NotSignedByCurrentOwner,
    #[error("epoch does not follow the current certificate")]
    EpochMismatch,
    #[error("previous-certificate digest does not match")]
    BadPrevDigest,
    #[error("signature invalid")]
    BadSignature,
    #[error("acceptance signature required")]
    MissingAcceptance,
}

impl Rejection {
    pub fn name(&self) -> &'static str {
        match self {
            Rejection::DuplicateGenesis => "DuplicateGenesis",
            Rejection::UnknownNote => "UnknownNote",
            Rejection::NotSignedByCurrentOwner => "NotSignedByCurrentOwner",
            Rejection::EpochMismatch => "EpochMismatch",
            Rejection::BadPrevDigest => "BadPrevDigest",
            Rejection::BadSignature => "BadSignature",
            Rejection::MissingAcceptance => "MissingAcceptance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DbPolicy {
    pub require_acceptance_signature: bool,
    pub retain_history: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertRecord {
    /// Kept regardless of history retention so issuance can be audited.
    pub genesis: OwnershipCert,
    pub current: OwnershipCert,
    /// Superseded certificates, oldest first; `None` unless retention is on.
    pub history: Option<Vec<OwnershipCert>>,
}

impl CertRecord {
    /// Every certificate this record knows, oldest first.
    pub fn chain(&self) -> Vec<&OwnershipCert> {
        match &self.history {
            Some(h) => h.iter().chain(std::iter::once(&self.current)).collect(),
            None if self.current.epoch == 0 => vec![&self.current],
            None => vec![&self.genesis, &self.current],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateDb {
    trusted_issuer: PublicKey,
    policy: DbPolicy,
    records: BTreeMap<u64, CertRecord>,
}

impl CertificateDb {
    pub fn new(trusted_issuer: PublicKey, policy: DbPolicy) -> Self {
        Self { trusted_issuer, policy, records: BTreeMap::new() }
    }

    pub fn trusted_issuer(&self) -> PublicKey {
        self.trusted_issuer
    }

    pub fn policy(&self) -> DbPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, note_number: u64) -> Option<&CertRecord> {
        self.records.get(&note_number)
    }

    pub fn records(&self) -> impl Iterator<Item = (u64, &CertRecord)> {
        self.records.iter().map(|(n, r)| (*n, r))
    }

    pub fn current(&self, note_number: u64) -> Option<&OwnershipCert> {
        self.records.get(&note_number).map(|r| &r.current)
    }

    pub fn current_owner(&self, note_number: u64) -> Option<PublicKey> {
        self.current(note_number).map(|c| c.owner_public_key)
    }

    /// Validates `cert` against this node's view and, if it is the next
    /// valid link, makes it the current certificate. A rejection leaves the
    /// database untouched.
    pub fn apply_certificate(&mut self, cert: &OwnershipCert) -> Result<(), Rejection> {
        if cert.is_genesis() {
            if !cert.prev_cert_digest.is_zero() {
                return Err(Rejection::BadPrevDigest);
            }
            if !verify_genesis(cert, &self.trusted_issuer) {
                return Err(Rejection::BadSignature);
            }
            if self.records.contains_key(&cert.note_number) {
                return Err(Rejection::DuplicateGenesis);
            }
            self.check_acceptance(cert)?;
            let history = self.policy.retain_history.then(Vec::new);
            self.records.insert(
                cert.note_number,
                CertRecord { genesis: cert.clone(), current: cert.clone(), history },
            );
            return Ok(());
        }

        let record = self.records.get(&cert.note_number).ok_or(Rejection::UnknownNote)?;
        let current = &record.current;
        if current.epoch.checked_add(1) != Some(cert.epoch) {
            return Err(Rejection::EpochMismatch);
        }
        if cert.prev_cert_digest != cert_digest(current) {
            return Err(Rejection::BadPrevDigest);
        }
        if !cert.transfer_signed_by(&current.owner_public_key) {
            return Err(Rejection::NotSignedByCurrentOwner);
        }
        self.check_acceptance(cert)?;

        let record = self.records.get_mut(&cert.note_number).expect("checked above");
        let old = std::mem::replace(&mut record.current, cert.clone());
        if let Some(h) = record.history.as_mut() {
            h.push(old);
        }
        Ok(())
    }

    fn check_acceptance(&self, cert: &OwnershipCert) -> Result<(), Rejection> {
        match cert.acceptance_valid() {
            Some(true) => Ok(()),
            Some(false) => Err(Rejection::BadSignature),
            None if self.policy.require_acceptance_signature => Err(Rejection::MissingAcceptance),
            None => Ok(()),
        }
    }

    pub fn export_db(&self) -> String {
        let mut out = String::with_capacity(16 + self.records.len() * 300);
        out.push_str(EXPORT_HEADER);
        out.push('\n');
        for record in self.records.values() {
            for cert in record.chain() {
                write_block(&mut out, cert);
            }
        }
        out
    }

    /// Parses an export. Trust anchor and policy are supplied by the
    /// importing node; signatures are not re-verified, a node trusts the
    /// snapshots it chooses to load.
    pub fn import_db(text: &str, trusted_issuer: PublicKey, policy: DbPolicy) -> Result<Self, ParseError> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, EXPORT_HEADER)) => {}
            Some((n, other)) => return Err(perr(n, format!("expected header `{EXPORT_HEADER}`, got `{other}`"))),
            None => return Err(perr(1, "empty input")),
        }

        let mut groups: BTreeMap<u64, Vec<OwnershipCert>> = BTreeMap::new();
        let mut last_n: Option<u64> = None;
        loop {
            let Some((ln, first)) = lines.next() else { break };
            if first.is_empty() {
                // Only the terminating newline may produce an empty line.
                if let Some((n, _)) = lines.next() {
                    return Err(perr(n, "content after blank line"));
                }
                break;
            }
            let (n, epoch, owner, prev) = parse_head(ln, first)?;
            let (ln2, second) = lines.next().ok_or_else(|| perr(ln + 1, "missing XFER line"))?;
            let xfer = parse_sig_line(ln2, second, "XFER=")?.ok_or_else(|| perr(ln2, "XFER cannot be `-`"))?;
            let (ln3, third) = lines.next().ok_or_else(|| perr(ln2 + 1, "missing ACCEPT line"))?;
            let accept = parse_sig_line(ln3, third, "ACCEPT=")?;

            if let Some(prev_n) = last_n {
                if n < prev_n {
                    return Err(perr(ln, format!("note {n} out of order")));
                }
            }
            last_n = Some(n);
            let group = groups.entry(n).or_default();
            if let Some(before) = group.last() {
                if epoch <= before.epoch {
                    return Err(perr(ln, format!("epoch {epoch} does not increase for note {n}")));
                }
            } else if epoch != 0 {
                return Err(perr(ln, format!("first block for note {n} must be epoch 0")));
            }
            group.push(OwnershipCert {
                note_number: n,
                epoch,
                owner_public_key: owner,
                prev_cert_digest: prev,
                transfer_signature: xfer,
                acceptance_signature: accept,
            });
        }

        let mut db = Self::new(trusted_issuer, policy);
        for (n, mut chain) in groups {
            let current = chain.pop().expect("non-empty group");
            let genesis = chain.first().cloned().unwrap_or_else(|| current.clone());
            let history = policy.retain_history.then_some(chain);
            db.records.insert(n, CertRecord { genesis, current, history });
        }
        Ok(db)
    }
}

fn write_block(out: &mut String, cert: &OwnershipCert) {
    let _ = writeln!(
        out,
        "N={} OWNER={} EPOCH={} PREV={}",
        cert.note_number,
        cert.owner_public_key.to_hex(),
        cert.epoch,
        cert.prev_cert_digest.to_hex()
    );
    let _ = writeln!(out, "XFER={}", cert.transfer_signature.to_hex());
    match &cert.acceptance_signature {
        Some(sig) => {
            let _ = writeln!(out, "ACCEPT={}", sig.to_hex());
        }
        None => out.push_str("ACCEPT=-\n"),
    }
}

fn perr(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

fn parse_head(ln: usize, line: &str) -> Result<(u64, u64, PublicKey, Digest), ParseError> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 4 {
        return Err(perr(ln, "expected `N=.. OWNER=.. EPOCH=.. PREV=..`"));
    }
    let field = |i: usize, key: &str| {
        fields[i]
            .strip_prefix(key)
            .ok_or_else(|| perr(ln, format!("expected `{key}` field")))
    };
    let n = parse_decimal(ln, field(0, "N=")?)?;
    let owner = PublicKey(parse_hex::<32>(ln, field(1, "OWNER=")?)?);
    let epoch = parse_decimal(ln, field(2, "EPOCH=")?)?;
    let prev = Digest(parse_hex::<32>(ln, field(3, "PREV=")?)?);
    Ok((n, epoch, owner, prev))
}

fn parse_sig_line(ln: usize, line: &str, key: &str) -> Result<Option<Signature>, ParseError> {
    let value = line
        .strip_prefix(key)
        .ok_or_else(|| perr(ln, format!("expected `{key}` line")))?;
    if value == "-" {
        return Ok(None);
    }
    Ok(Some(Signature(parse_hex::<64>(ln, value)?)))
}

fn parse_decimal(ln: usize, s: &str) -> Result<u64, ParseError> {
    // Canonical decimal only: no sign, no leading zeros.
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return Err(perr(ln, format!("bad decimal `{s}`")));
    }
    s.parse().map_err(|_| perr(ln, format!("decimal `{s}` out of range")))
}

fn parse_hex<const L: usize>(ln: usize, s: &str) -> Result<[u8; L], ParseError> {
    if s.len() != 2 * L || s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(perr(ln, format!("expected {} lowercase hex digits", 2 * L)));
    }
    let mut out = [0u8; L];
    hex::decode_to_slice(s, &mut out).map_err(|e| perr(ln, format!("bad hex: {e}")))?;
    Ok(out)
}

/// True iff at least `threshold` peers currently record `expected_owner` for
/// the note. A threshold above the number of peers can never be met.
pub fn quorum_owner_check(
    peers: &[&CertificateDb],
    note_number: u64,
    expected_owner: &PublicKey,
    threshold: usize,
) -> bool {
    peers
        .iter()
        .filter(|db| db.current_owner(note_number).as_ref() == Some(expected_owner))
        .count()
        >= threshold
}
