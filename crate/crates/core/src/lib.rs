//! Ownership-transfer electronic cash.
//!
//! A note is a frozen, issuer-signed body plus an ownership certificate
//! that each owner re-signs to the next. Every node keeps a database of the
//! current certificate per note and accepts a new one only if the recorded
//! owner signed it for the next chain position. The [`sim`] and
//! [`scenario`] modules drive honest and adversarial runs of the protocol
//! over a deterministic broadcast network.

pub mod crypto;
pub mod db;
pub mod error;
pub mod issuer;
pub mod note;
pub mod scenario;
pub mod sim;
pub mod wallet;

pub use crypto::{Digest, KeyPair, PublicKey, Signature};
pub use db::{CertificateDb, DbPolicy, Rejection};
pub use issuer::{audit_issuance, AuditReport, IssuerState};
pub use note::{Note, NoteBody, OwnershipCert};
pub use wallet::{WalletReject, WalletState};
