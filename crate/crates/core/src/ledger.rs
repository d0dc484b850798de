//! Append-only, hash-linked evidence registry.
//!
//! Each block after genesis carries exactly one [`EvidenceRegistration`], so a
//! block number addresses one piece of evidence. Blocks are persisted as one
//! canonical JSON document per line; the log is only ever appended to.
//!
//! Canonical JSON: object keys sorted lexicographically, no insignificant
//! whitespace, UTF-8 strings. `tx_digest` is the SHA-256 of the canonical
//! registration encoding and `block_hash` is the SHA-256 of
//! `index|prev_hash|tx_digest|timestamp` in ASCII.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::cas::ContentId;
use crate::evidence::{is_lower_hex, Digest, EvidenceId, EvidenceMeta, HashAlgorithm};

pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("block 0 is genesis and carries no registration")]
    NoRegistration,
    #[error("block {requested} out of range (chain length {len})")]
    OutOfRange { requested: u64, len: u64 },
    #[error("no registration for evidence {0}")]
    NotFound(EvidenceId),
    #[error("invalid registration: {0}")]
    InvalidRegistration(String),
    #[error("ledger log is corrupt: {0}")]
    Corrupt(ValidationReport),
    #[error("ledger I/O failure: {0}")]
    Io(#[from] io::Error),
}

/// Source of block timestamps (Unix seconds).
pub trait Clock: Send + Sync + fmt::Debug {
    fn now_unix(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_unix(&self) -> i64 {
        chrono::Utc::now().timestamp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub i64);

impl Clock for FixedClock {
    fn now_unix(&self) -> i64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceRegistration {
    pub evidence_id: EvidenceId,
    pub content_id: ContentId,
    pub md5: Digest,
    pub meta: EvidenceMeta,
}

impl EvidenceRegistration {
    pub fn new(
        evidence_id: EvidenceId,
        content_id: ContentId,
        md5: Digest,
        meta: EvidenceMeta,
    ) -> Result<Self, LedgerError> {
        if md5.algorithm() != HashAlgorithm::Md5 {
            return Err(LedgerError::InvalidRegistration(format!(
                "registration fingerprint must be MD5, got {md5}"
            )));
        }
        Ok(Self {
            evidence_id,
            content_id,
            md5,
            meta,
        })
    }

    pub fn canonical_encoding(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("registration serializes"))
    }

    pub fn tx_digest(&self) -> String {
        sha256_hex(self.canonical_encoding().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockHeader {
    pub index: u64,
    pub prev_hash: String,
    pub tx_digest: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub header: BlockHeader,
    pub registration: Option<EvidenceRegistration>,
    pub block_hash: String,
}

impl Block {
    pub fn canonical_encoding(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("block serializes"))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes a JSON value with sorted keys and no whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                write_canonical(v, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&serde_json::to_string(scalar).expect("scalar serializes")),
    }
}

pub fn block_hash_of(header: &BlockHeader) -> String {
    let preimage = format!(
        "{}|{}|{}|{}",
        header.index, header.prev_hash, header.tx_digest, header.timestamp
    );
    sha256_hex(preimage.as_bytes())
}

pub fn genesis(timestamp: i64) -> Block {
    let header = BlockHeader {
        index: 0,
        prev_hash: ZERO_HASH.to_string(),
        tx_digest: sha256_hex(b""),
        timestamp,
    };
    Block {
        block_hash: block_hash_of(&header),
        header,
        registration: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub first_bad_index: Option<u64>,
    pub reason: String,
}

impl ValidationReport {
    fn ok(len: usize) -> Self {
        Self {
            valid: true,
            first_bad_index: None,
            reason: format!("{len} blocks verified"),
        }
    }

    fn bad(index: usize, reason: impl Into<String>) -> Self {
        Self {
            valid: false,
            first_bad_index: Some(index as u64),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.first_bad_index {
            Some(i) => write!(f, "invalid at block {i}: {}", self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

fn check_block(index: usize, block: &Block, prev: Option<&Block>) -> Result<(), String> {
    let h = &block.header;
    if h.index != index as u64 {
        return Err(format!("expected index {index}, found {}", h.index));
    }
    for (name, field) in [
        ("prev_hash", &h.prev_hash),
        ("tx_digest", &h.tx_digest),
        ("block_hash", &block.block_hash),
    ] {
        if !is_lower_hex(field, 64) {
            return Err(format!("{name} is not 64 lowercase hex chars"));
        }
    }
    match (prev, &block.registration) {
        (None, None) => {
            if h.prev_hash != ZERO_HASH {
                return Err("genesis prev_hash is not zero".into());
            }
            if h.tx_digest != sha256_hex(b"") {
                return Err("genesis tx_digest is not the empty digest".into());
            }
        }
        (None, Some(_)) => return Err("genesis carries a registration".into()),
        (Some(_), None) => return Err("block carries no registration".into()),
        (Some(prev), Some(reg)) => {
            if h.prev_hash != prev.block_hash {
                return Err("prev_hash does not link to previous block".into());
            }
            if reg.md5.algorithm() != HashAlgorithm::Md5 {
                return Err("registration fingerprint is not MD5".into());
            }
            if h.tx_digest != reg.tx_digest() {
                return Err("tx_digest does not match registration".into());
            }
        }
    }
    if block.block_hash != block_hash_of(h) {
        return Err("block_hash does not match header".into());
    }
    Ok(())
}

fn validate_entries<'a>(
    entries: impl IntoIterator<Item = Result<&'a Block, String>>,
) -> ValidationReport {
    let mut prev: Option<&Block> = None;
    let mut count = 0;
    for (i, entry) in entries.into_iter().enumerate() {
        let block = match entry {
            Ok(b) => b,
            Err(reason) => return ValidationReport::bad(i, reason),
        };
        if let Err(reason) = check_block(i, block, prev) {
            return ValidationReport::bad(i, reason);
        }
        prev = Some(block);
        count = i + 1;
    }
    if count == 0 {
        return ValidationReport::bad(0, "chain has no genesis block");
    }
    ValidationReport::ok(count)
}

/// Parses and validates a raw ledger log. Every line must be the exact
/// canonical encoding of its block, so any byte-level change is detected
/// even when it still parses.
pub fn validate_log_bytes(bytes: &[u8]) -> (ValidationReport, Vec<Block>) {
    let mut parsed: Vec<Result<Block, String>> = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let (line, tail, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(pos) => (&rest[..pos], &rest[pos + 1..], true),
            None => (rest, &rest[rest.len()..], false),
        };
        rest = tail;
        let entry = if !terminated {
            Err("unterminated record".to_string())
        } else {
            match serde_json::from_slice::<Block>(line) {
                Ok(block) if block.canonical_encoding().as_bytes() == line => Ok(block),
                Ok(_) => Err("record is not in canonical form".to_string()),
                Err(e) => Err(format!("unparseable record: {e}")),
            }
        };
        parsed.push(entry);
    }
    let report = validate_entries(parsed.iter().map(|e| e.as_ref().map_err(Clone::clone)));
    let blocks = parsed.into_iter().map_while(Result::ok).collect();
    (report, blocks)
}

pub fn validate_log(path: impl AsRef<Path>) -> io::Result<ValidationReport> {
    let bytes = fs::read(path)?;
    Ok(validate_log_bytes(&bytes).0)
}

/// In-memory chain of blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn new(genesis: Block) -> Self {
        Self {
            blocks: vec![genesis],
        }
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always has genesis")
    }

    /// Builds (without appending) the block that would carry `reg`.
    pub fn next_block(&self, reg: EvidenceRegistration, timestamp: i64) -> Block {
        let header = BlockHeader {
            index: self.len(),
            prev_hash: self.tip().block_hash.clone(),
            tx_digest: reg.tx_digest(),
            timestamp,
        };
        Block {
            block_hash: block_hash_of(&header),
            header,
            registration: Some(reg),
        }
    }

    pub fn append_registration(&mut self, reg: EvidenceRegistration, timestamp: i64) -> u64 {
        let block = self.next_block(reg, timestamp);
        self.blocks.push(block);
        self.len() - 1
    }

    pub fn lookup_by_block_number(&self, n: u64) -> Result<&EvidenceRegistration, LedgerError> {
        if n == 0 {
            return Err(LedgerError::NoRegistration);
        }
        let block = self.blocks.get(n as usize).ok_or(LedgerError::OutOfRange {
            requested: n,
            len: self.len(),
        })?;
        block
            .registration
            .as_ref()
            .ok_or(LedgerError::NoRegistration)
    }

    pub fn lookup_by_evidence_id(
        &self,
        id: &EvidenceId,
    ) -> Result<(u64, &EvidenceRegistration), LedgerError> {
        self.blocks
            .iter()
            .find_map(|b| {
                b.registration
                    .as_ref()
                    .filter(|r| r.evidence_id == *id)
                    .map(|r| (b.header.index, r))
            })
            .ok_or_else(|| LedgerError::NotFound(id.clone()))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_entries(self.blocks.iter().map(Ok))
    }
}

pub fn validate_chain(chain: &Chain) -> ValidationReport {
    chain.validate()
}

#[derive(Debug)]
struct LedgerState {
    chain: Chain,
    earliest: HashMap<EvidenceId, u64>,
    log_len: u64,
}

/// A persistent chain backed by an append-only log file. Appends are
/// serialized through a write lock; lookups take a read lock and only ever
/// see fully appended blocks.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    clock: Arc<dyn Clock>,
    state: RwLock<LedgerState>,
}

impl Ledger {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        Self::open_with_clock(path, Arc::new(SystemClock))
    }

    /// Opens the log at `path`, writing a genesis block if it is absent or
    /// empty. A log that fails validation is refused.
    pub fn open_with_clock(
        path: impl AsRef<Path>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };

        let (chain, log_len) = if bytes.is_empty() {
            let genesis = genesis(clock.now_unix());
            let line = format!("{}\n", genesis.canonical_encoding());
            let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
            file.write_all(line.as_bytes())?;
            file.sync_all()?;
            (Chain::new(genesis), line.len() as u64)
        } else {
            let (report, blocks) = validate_log_bytes(&bytes);
            if !report.valid {
                return Err(LedgerError::Corrupt(report));
            }
            (Chain::from_blocks(blocks), bytes.len() as u64)
        };

        let mut earliest = HashMap::new();
        for block in chain.blocks() {
            if let Some(reg) = &block.registration {
                earliest
                    .entry(reg.evidence_id.clone())
                    .or_insert(block.header.index);
            }
        }
        Ok(Self {
            path,
            clock,
            state: RwLock::new(LedgerState {
                chain,
                earliest,
                log_len,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one registration in its own block and returns the block
    /// number. The block is synced to disk before it becomes visible.
    pub fn append_registration(&self, reg: EvidenceRegistration) -> Result<u64, LedgerError> {
        if reg.md5.algorithm() != HashAlgorithm::Md5 {
            return Err(LedgerError::InvalidRegistration(
                "fingerprint must be MD5".into(),
            ));
        }
        let mut state = self.state.write().expect("ledger lock poisoned");
        let block = state.chain.next_block(reg, self.clock.now_unix());
        let line = format!("{}\n", block.canonical_encoding());

        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        if let Err(e) = file
            .write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
        {
            rollback(&file, state.log_len);
            return Err(e.into());
        }

        let number = block.header.index;
        if let Some(reg) = &block.registration {
            state
                .earliest
                .entry(reg.evidence_id.clone())
                .or_insert(number);
        }
        state.chain.blocks.push(block);
        state.log_len += line.len() as u64;
        Ok(number)
    }

    pub fn lookup_by_block_number(&self, n: u64) -> Result<EvidenceRegistration, LedgerError> {
        let state = self.state.read().expect("ledger lock poisoned");
        state.chain.lookup_by_block_number(n).cloned()
    }

    pub fn lookup_by_evidence_id(
        &self,
        id: &EvidenceId,
    ) -> Result<(u64, EvidenceRegistration), LedgerError> {
        let state = self.state.read().expect("ledger lock poisoned");
        let n = *state
            .earliest
            .get(id)
            .ok_or_else(|| LedgerError::NotFound(id.clone()))?;
        Ok((n, state.chain.lookup_by_block_number(n)?.clone()))
    }

    pub fn len(&self) -> u64 {
        self.state.read().expect("ledger lock poisoned").chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every registration with its block number, in chain order.
    pub fn registrations(&self) -> Vec<(u64, EvidenceRegistration)> {
        let state = self.state.read().expect("ledger lock poisoned");
        state
            .chain
            .blocks()
            .iter()
            .filter_map(|b| b.registration.clone().map(|r| (b.header.index, r)))
            .collect()
    }

    pub fn snapshot(&self) -> Chain {
        self.state
            .read()
            .expect("ledger lock poisoned")
            .chain
            .clone()
    }

    /// Validates the in-memory chain.
    pub fn validate(&self) -> ValidationReport {
        self.state
            .read()
            .expect("ledger lock poisoned")
            .chain
            .validate()
    }

    /// Validates the bytes currently on disk.
    pub fn validate_persisted(&self) -> io::Result<ValidationReport> {
        let _guard = self.state.read().expect("ledger lock poisoned");
        validate_log(&self.path)
    }
}

fn rollback(file: &File, len: u64) {
    let _ = file.set_len(len);
    let _ = file.sync_data();
}
