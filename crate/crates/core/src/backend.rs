//! One POST/GET contract over both storage paradigms.
//!
//! * `LedgerCas`: payload into the content-addressed store, then a ledger
//!   block registering `(evidence_id, content_id, md5, meta)`. Retrieval goes
//!   block number → content id → payload.
//! * `Relational`: payload, metadata and fingerprints in one row, retrieved
//!   by evidence id.
//!
//! Every operation is timed on the monotonic clock. An optional latency
//! model sleeps inside the timed window to emulate a network path. Hash
//! verification is never part of a GET's timed window.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::cas::{CasError, CasStore, ContentId};
use crate::evidence::{
    compute_md5, verify_integrity, Digest, EvidenceId, EvidenceMeta, VerificationResult,
};
use crate::ledger::{EvidenceRegistration, Ledger, LedgerError};
use crate::relational::{self, EvidenceRow, RelationalConfig, RelationalError, RelationalStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "ledger")]
    LedgerCas,
    #[serde(rename = "sql")]
    Relational,
}

impl BackendKind {
    pub const ALL: [BackendKind; 2] = [BackendKind::LedgerCas, BackendKind::Relational];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::LedgerCas => "ledger",
            BackendKind::Relational => "sql",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown backend `{0}` (expected `ledger` or `sql`)")]
pub struct UnknownBackend(pub String);

impl FromStr for BackendKind {
    type Err = UnknownBackend;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ledger" => Ok(BackendKind::LedgerCas),
            "sql" => Ok(BackendKind::Relational),
            other => Err(UnknownBackend(other.to_string())),
        }
    }
}

/// Where a piece of evidence lives. Ledger locators are resolved by block
/// number when present, otherwise by evidence id; when both are given they
/// must agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locator {
    #[serde(rename = "backend")]
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_number: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_id: Option<EvidenceId>,
}

impl Locator {
    pub fn ledger(block_number: u64, evidence_id: EvidenceId) -> Self {
        Self {
            kind: BackendKind::LedgerCas,
            block_number: Some(block_number),
            evidence_id: Some(evidence_id),
        }
    }

    pub fn ledger_block(block_number: u64) -> Self {
        Self {
            kind: BackendKind::LedgerCas,
            block_number: Some(block_number),
            evidence_id: None,
        }
    }

    pub fn by_id(kind: BackendKind, evidence_id: EvidenceId) -> Self {
        Self {
            kind,
            block_number: None,
            evidence_id: Some(evidence_id),
        }
    }

    pub fn relational(evidence_id: EvidenceId) -> Self {
        Self::by_id(BackendKind::Relational, evidence_id)
    }
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(n) = self.block_number {
            write!(f, " block {n}")?;
        }
        if let Some(id) = &self.evidence_id {
            write!(f, " id {id}")?;
        }
        Ok(())
    }
}

/// One measured operation: `seconds = ended_at - started_at` on the
/// monotonic clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedResult {
    pub started_at: Instant,
    pub ended_at: Instant,
    pub seconds: f64,
}

impl TimedResult {
    pub fn between(started_at: Instant, ended_at: Instant) -> Self {
        Self {
            started_at,
            ended_at,
            seconds: ended_at.saturating_duration_since(started_at).as_secs_f64(),
        }
    }
}

impl Serialize for TimedResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("TimedResult", 1)?;
        s.serialize_field("seconds", &self.seconds)?;
        s.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub enabled: bool,
    pub base_seconds: f64,
    pub bandwidth_bytes_per_second: f64,
}

impl LatencyModel {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            base_seconds: 0.0,
            bandwidth_bytes_per_second: f64::MAX,
        }
    }

    pub fn new(base_seconds: f64, bandwidth_bytes_per_second: f64) -> Self {
        assert!(base_seconds >= 0.0, "base latency must be non-negative");
        assert!(
            bandwidth_bytes_per_second > 0.0,
            "bandwidth must be positive"
        );
        Self {
            enabled: true,
            base_seconds,
            bandwidth_bytes_per_second,
        }
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::disabled()
    }
}

pub fn simulated_delay(model: &LatencyModel, transfer_bytes: u64) -> f64 {
    if !model.enabled {
        return 0.0;
    }
    model.base_seconds + transfer_bytes as f64 / model.bandwidth_bytes_per_second
}

fn sleep_for(model: &LatencyModel, transfer_bytes: u64) {
    let delay = simulated_delay(model, transfer_bytes);
    if delay > 0.0 && delay.is_finite() {
        std::thread::sleep(Duration::from_secs_f64(delay));
    }
}

/// A shared latency model with optional per-backend overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySettings {
    #[serde(default)]
    pub default: LatencyModel,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<BackendKind, LatencyModel>,
}

impl LatencySettings {
    pub fn uniform(model: LatencyModel) -> Self {
        Self {
            default: model,
            overrides: BTreeMap::new(),
        }
    }

    pub fn for_backend(&self, kind: BackendKind) -> &LatencyModel {
        self.overrides.get(&kind).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StoreReceipt {
    pub locator: Locator,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content_id: Option<ContentId>,
    pub md5: Digest,
    pub timing: TimedResult,
}

#[derive(Debug, Clone)]
pub struct Retrieval {
    pub payload: Vec<u8>,
    pub registered_md5: Digest,
    pub meta: EvidenceMeta,
    pub evidence_id: EvidenceId,
    pub timing: TimedResult,
}

/// A listing row without payload bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListingEntry {
    pub backend: BackendKind,
    pub evidence_id: EvidenceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_number: Option<u64>,
    pub case_id: String,
    pub filename: String,
    pub media_type: String,
    pub size_bytes: u64,
    pub md5: Digest,
    #[serde(with = "crate::evidence::utc_seconds")]
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub submitter: String,
    pub description: String,
}

impl ListingEntry {
    fn new(
        backend: BackendKind,
        evidence_id: EvidenceId,
        block_number: Option<u64>,
        meta: EvidenceMeta,
        md5: Digest,
    ) -> Self {
        Self {
            backend,
            evidence_id,
            block_number,
            case_id: meta.case_id,
            filename: meta.filename,
            media_type: meta.media_type,
            size_bytes: meta.size_bytes,
            md5,
            created_at: meta.submitted_at,
            submitter: meta.submitter,
            description: meta.description,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend `{0}` is not configured")]
    NotConfigured(BackendKind),
    #[error("payload of {size} bytes exceeds cap of {cap} bytes")]
    PayloadTooLarge { size: u64, cap: u64 },
    #[error("metadata size_bytes {declared} does not match payload length {actual}")]
    MetadataMismatch { declared: u64, actual: u64 },
    #[error("invalid locator: {0}")]
    InvalidLocator(String),
    #[error("evidence not found: {0}")]
    NotFound(String),
    #[error("dangling registration at block {block_number}: ledger references {content_id} but the store cannot produce it")]
    DanglingRegistration {
        block_number: u64,
        content_id: ContentId,
    },
    #[error("stored content for {locator} failed integrity checks: {detail}")]
    Integrity { locator: String, detail: String },
    #[error("{kind} backend failed: {detail}")]
    StoreFailed { kind: BackendKind, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub cas_root: PathBuf,
    pub ledger_log: PathBuf,
    pub relational: RelationalConfig,
    #[serde(default = "default_cap")]
    pub payload_cap_bytes: u64,
    #[serde(default)]
    pub latency: LatencySettings,
}

fn default_cap() -> u64 {
    relational::DEFAULT_PAYLOAD_CAP
}

impl BackendConfig {
    /// Standard layout under one data directory.
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        Self {
            cas_root: dir.join("cas"),
            ledger_log: dir.join("ledger.log"),
            relational: RelationalConfig::embedded(dir.join("evidence.db")),
            payload_cap_bytes: relational::DEFAULT_PAYLOAD_CAP,
            latency: LatencySettings::default(),
        }
    }
}

#[derive(Debug)]
pub struct LedgerCas {
    pub cas: CasStore,
    pub ledger: Ledger,
}

#[derive(Debug)]
pub struct EvidenceBackend {
    ledger_cas: Option<LedgerCas>,
    relational: Option<RelationalStore>,
    payload_cap: u64,
    latency: LatencySettings,
}

impl EvidenceBackend {
    /// Opens the requested backends from `config`.
    pub fn open(config: &BackendConfig, kinds: &[BackendKind]) -> Result<Self, BackendError> {
        let ledger_cas = if kinds.contains(&BackendKind::LedgerCas) {
            let failed = |detail: String| BackendError::StoreFailed {
                kind: BackendKind::LedgerCas,
                detail,
            };
            let cas = CasStore::open(&config.cas_root).map_err(|e| failed(e.to_string()))?;
            let ledger = Ledger::open(&config.ledger_log).map_err(|e| failed(e.to_string()))?;
            Some(LedgerCas { cas, ledger })
        } else {
            None
        };
        let relational = if kinds.contains(&BackendKind::Relational) {
            let mut rel = config.relational.clone();
            rel.payload_cap_bytes = config.payload_cap_bytes;
            Some(
                relational::init_schema(&rel).map_err(|e| BackendError::StoreFailed {
                    kind: BackendKind::Relational,
                    detail: e.to_string(),
                })?,
            )
        } else {
            None
        };
        Ok(Self {
            ledger_cas,
            relational,
            payload_cap: config.payload_cap_bytes,
            latency: config.latency.clone(),
        })
    }

    pub fn from_parts(
        ledger_cas: Option<LedgerCas>,
        relational: Option<RelationalStore>,
        payload_cap: u64,
        latency: LatencySettings,
    ) -> Self {
        Self {
            ledger_cas,
            relational,
            payload_cap,
            latency,
        }
    }

    pub fn payload_cap(&self) -> u64 {
        self.payload_cap
    }

    pub fn latency(&self) -> &LatencySettings {
        &self.latency
    }

    pub fn ledger_cas(&self) -> Option<&LedgerCas> {
        self.ledger_cas.as_ref()
    }

    pub fn relational(&self) -> Option<&RelationalStore> {
        self.relational.as_ref()
    }

    pub fn kinds(&self) -> Vec<BackendKind> {
        BackendKind::ALL
            .into_iter()
            .filter(|k| match k {
                BackendKind::LedgerCas => self.ledger_cas.is_some(),
                BackendKind::Relational => self.relational.is_some(),
            })
            .collect()
    }

    fn require_ledger_cas(&self) -> Result<&LedgerCas, BackendError> {
        self.ledger_cas
            .as_ref()
            .ok_or(BackendError::NotConfigured(BackendKind::LedgerCas))
    }

    fn require_relational(&self) -> Result<&RelationalStore, BackendError> {
        self.relational
            .as_ref()
            .ok_or(BackendError::NotConfigured(BackendKind::Relational))
    }

    /// Stores a payload on one backend. The timed window runs from the start
    /// of fingerprinting to the durable commit, plus any simulated latency.
    pub fn post_evidence(
        &self,
        kind: BackendKind,
        payload: &[u8],
        meta: EvidenceMeta,
    ) -> Result<StoreReceipt, BackendError> {
        let size = payload.len() as u64;
        if size > self.payload_cap {
            return Err(BackendError::PayloadTooLarge {
                size,
                cap: self.payload_cap,
            });
        }
        if meta.size_bytes != size {
            return Err(BackendError::MetadataMismatch {
                declared: meta.size_bytes,
                actual: size,
            });
        }
        let failed = |detail: String| BackendError::StoreFailed { kind, detail };

        let started = Instant::now();
        let (locator, content_id, md5) = match kind {
            BackendKind::LedgerCas => {
                let lc = self.require_ledger_cas()?;
                let md5 = compute_md5(payload);
                let cid = lc.cas.put(payload).map_err(|e| failed(e.to_string()))?;
                let evidence_id = EvidenceId::generate();
                let reg =
                    EvidenceRegistration::new(evidence_id.clone(), cid.clone(), md5.clone(), meta)
                        .map_err(|e| failed(e.to_string()))?;
                let block = lc
                    .ledger
                    .append_registration(reg)
                    .map_err(|e| failed(e.to_string()))?;
                (Locator::ledger(block, evidence_id), Some(cid), md5)
            }
            BackendKind::Relational => {
                let store = self.require_relational()?;
                let row = EvidenceRow::new(EvidenceId::generate(), &meta, payload.to_vec());
                let md5 = row.md5().map_err(|e| failed(e.to_string()))?;
                let id = store.insert_evidence(&row).map_err(|e| match e {
                    RelationalError::PayloadTooLarge { size, cap } => {
                        BackendError::PayloadTooLarge { size, cap }
                    }
                    other => failed(other.to_string()),
                })?;
                (Locator::relational(id), None, md5)
            }
        };
        sleep_for(self.latency.for_backend(kind), size);
        let timing = TimedResult::between(started, Instant::now());

        Ok(StoreReceipt {
            locator,
            content_id,
            md5,
            timing,
        })
    }

    fn resolve_registration(
        &self,
        lc: &LedgerCas,
        locator: &Locator,
    ) -> Result<(u64, EvidenceRegistration), BackendError> {
        let not_found = || BackendError::NotFound(locator.to_string());
        let map = |e: LedgerError| match e {
            LedgerError::NoRegistration
            | LedgerError::OutOfRange { .. }
            | LedgerError::NotFound(_) => not_found(),
            other => BackendError::StoreFailed {
                kind: BackendKind::LedgerCas,
                detail: other.to_string(),
            },
        };
        match (locator.block_number, &locator.evidence_id) {
            (Some(n), id) => {
                let reg = lc.ledger.lookup_by_block_number(n).map_err(map)?;
                if id.as_ref().is_some_and(|id| *id != reg.evidence_id) {
                    return Err(not_found());
                }
                Ok((n, reg))
            }
            (None, Some(id)) => lc.ledger.lookup_by_evidence_id(id).map_err(map),
            (None, None) => Err(BackendError::InvalidLocator(
                "ledger locator needs a block number or an evidence id".into(),
            )),
        }
    }

    fn relational_id(locator: &Locator) -> Result<&EvidenceId, BackendError> {
        locator.evidence_id.as_ref().ok_or_else(|| {
            BackendError::InvalidLocator("relational locator needs an evidence id".into())
        })
    }

    /// Retrieves a payload. The timed window covers lookup through the last
    /// payload byte (plus simulated latency) and excludes hash verification.
    pub fn get_evidence(&self, locator: &Locator) -> Result<Retrieval, BackendError> {
        let started = Instant::now();
        let (payload, registered_md5, meta, evidence_id) = match locator.kind {
            BackendKind::LedgerCas => {
                let lc = self.require_ledger_cas()?;
                let (block_number, reg) = self.resolve_registration(lc, locator)?;
                let payload = lc.cas.get(&reg.content_id).map_err(|e| match e {
                    CasError::NotFound(content_id) => BackendError::DanglingRegistration {
                        block_number,
                        content_id,
                    },
                    CasError::IntegrityViolation { .. } => BackendError::Integrity {
                        locator: locator.to_string(),
                        detail: e.to_string(),
                    },
                    other => BackendError::StoreFailed {
                        kind: BackendKind::LedgerCas,
                        detail: other.to_string(),
                    },
                })?;
                (payload, reg.md5, reg.meta, reg.evidence_id)
            }
            BackendKind::Relational => {
                let store = self.require_relational()?;
                let row = self.select_row(store, locator)?;
                let md5 = row.md5().map_err(|e| BackendError::Integrity {
                    locator: locator.to_string(),
                    detail: e.to_string(),
                })?;
                let meta = row.meta();
                (row.payload, md5, meta, row.evidence_id)
            }
        };
        sleep_for(self.latency.for_backend(locator.kind), payload.len() as u64);
        let timing = TimedResult::between(started, Instant::now());
        Ok(Retrieval {
            payload,
            registered_md5,
            meta,
            evidence_id,
            timing,
        })
    }

    fn select_row(
        &self,
        store: &RelationalStore,
        locator: &Locator,
    ) -> Result<EvidenceRow, BackendError> {
        let id = Self::relational_id(locator)?;
        store.select_evidence(id).map_err(|e| match e {
            RelationalError::NotFound(_) => BackendError::NotFound(locator.to_string()),
            other => BackendError::StoreFailed {
                kind: BackendKind::Relational,
                detail: other.to_string(),
            },
        })
    }

    /// Recomputes the payload's MD5 and compares it with the fingerprint
    /// registered at storage time. Corruption yields a `Fail` verdict, not an
    /// error; only unknown locators and operational faults are errors.
    pub fn verify_evidence(&self, locator: &Locator) -> Result<VerificationResult, BackendError> {
        match locator.kind {
            BackendKind::LedgerCas => {
                let lc = self.require_ledger_cas()?;
                let (_, reg) = self.resolve_registration(lc, locator)?;
                let payload = match lc.cas.get(&reg.content_id) {
                    Ok(payload) => payload,
                    Err(CasError::IntegrityViolation { .. }) => {
                        lc.cas.get_unverified(&reg.content_id).unwrap_or_default()
                    }
                    // Nothing retrievable: the registered content is gone.
                    Err(CasError::NotFound(_)) => Vec::new(),
                    Err(other) => {
                        return Err(BackendError::StoreFailed {
                            kind: BackendKind::LedgerCas,
                            detail: other.to_string(),
                        })
                    }
                };
                Ok(verify_integrity(&payload, &reg.md5))
            }
            BackendKind::Relational => {
                let store = self.require_relational()?;
                let row = self.select_row(store, locator)?;
                let expected = row.md5().map_err(|e| BackendError::Integrity {
                    locator: locator.to_string(),
                    detail: e.to_string(),
                })?;
                Ok(verify_integrity(&row.payload, &expected))
            }
        }
    }

    /// Finds which backend holds `evidence_id`, relational first.
    pub fn locate(&self, evidence_id: &EvidenceId) -> Option<Locator> {
        if let Some(store) = &self.relational {
            if store.contains(evidence_id).unwrap_or(false) {
                return Some(Locator::relational(evidence_id.clone()));
            }
        }
        let lc = self.ledger_cas.as_ref()?;
        let (n, _) = lc.ledger.lookup_by_evidence_id(evidence_id).ok()?;
        Some(Locator::ledger(n, evidence_id.clone()))
    }

    /// Merged listing across backends, ordered by creation time.
    pub fn list_evidence(
        &self,
        case_filter: Option<&str>,
    ) -> Result<Vec<ListingEntry>, BackendError> {
        let mut entries = Vec::new();
        if let Some(lc) = &self.ledger_cas {
            for (n, reg) in lc.ledger.registrations() {
                if case_filter.is_some_and(|c| c != reg.meta.case_id) {
                    continue;
                }
                entries.push(ListingEntry::new(
                    BackendKind::LedgerCas,
                    reg.evidence_id,
                    Some(n),
                    reg.meta,
                    reg.md5,
                ));
            }
        }
        if let Some(store) = &self.relational {
            let rows = store
                .list_evidence(case_filter)
                .map_err(|e| BackendError::StoreFailed {
                    kind: BackendKind::Relational,
                    detail: e.to_string(),
                })?;
            for row in rows {
                let Ok(md5) = Digest::from_hex(crate::evidence::HashAlgorithm::Md5, &row.md5_hex)
                else {
                    continue;
                };
                entries.push(ListingEntry::new(
                    BackendKind::Relational,
                    row.evidence_id,
                    None,
                    row.meta,
                    md5,
                ));
            }
        }
        entries.sort_by_key(|e| e.created_at);
        Ok(entries)
    }
}
