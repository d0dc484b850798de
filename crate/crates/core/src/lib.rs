//! Digital twin evidence storage.
//!
//! Two storage paradigms behind one interface:
//!
//! * a content-addressed chunk store ([`cas`]) fronted by an append-only,
//!   hash-linked evidence registry ([`ledger`]);
//! * a relational store keeping payloads as BLOBs ([`relational`]).
//!
//! [`backend`] exposes timed POST/GET/verify over both, and [`bench`] with
//! [`stats`] runs comparative experiments and summarizes them.

pub mod backend;
pub mod bench;
pub mod cas;
pub mod evidence;
pub mod ledger;
pub mod relational;
pub mod stats;

pub use backend::{
    BackendConfig, BackendError, BackendKind, EvidenceBackend, LatencyModel, Locator, StoreReceipt,
};
pub use cas::{CasStore, ContentId};
pub use evidence::{
    compute_md5, compute_sha256, verify_integrity, Digest, EvidenceId, EvidenceMeta, Verdict,
    VerificationResult,
};
pub use ledger::{Ledger, ValidationReport};
pub use relational::RelationalStore;
