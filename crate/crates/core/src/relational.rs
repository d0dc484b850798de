//! Relational evidence store: payloads kept as BLOBs next to their metadata
//! and fingerprints in a single `evidence` table.
//!
//! The reference engine is embedded SQLite in WAL mode. Writes go through one
//! connection under a mutex; reads draw from a small connection pool, so
//! readers run concurrently and only ever see committed rows.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, Utc};
use rusqlite::{params, Connection, ErrorCode, OpenFlags, OptionalExtension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{
    compute_md5, compute_sha256, utc_seconds, verify_integrity, Digest, EvidenceId, EvidenceMeta,
    HashAlgorithm, VerificationResult,
};

pub const DEFAULT_TIMEOUT_SECS: u64 = 10;
pub const DEFAULT_PAYLOAD_CAP: u64 = 256 * 1024 * 1024;

const TABLE: &str = "evidence";
const COLUMNS: [&str; 11] = [
    "evidence_id",
    "case_id",
    "filename",
    "media_type",
    "submitter",
    "description",
    "size_bytes",
    "md5_hex",
    "sha256_hex",
    "created_at",
    "payload",
];

#[derive(Debug, Error)]
pub enum RelationalError {
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("evidence {0} already exists")]
    DuplicateKey(EvidenceId),
    #[error("insert refused: {0}")]
    IntegrityRejected(String),
    #[error("payload of {size} bytes exceeds cap of {cap} bytes")]
    PayloadTooLarge { size: u64, cap: u64 },
    #[error("evidence {0} not found")]
    NotFound(EvidenceId),
    #[error("database error: {0}")]
    Database(#[from] rusqlite::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    pub connect_secs: u64,
    pub read_secs: u64,
    pub write_secs: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            connect_secs: DEFAULT_TIMEOUT_SECS,
            read_secs: DEFAULT_TIMEOUT_SECS,
            write_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Connector {
    Embedded {
        path: PathBuf,
    },
    /// An external database server. Credentials may be overridden from the
    /// environment by the service layer.
    Server {
        host: String,
        port: u16,
        user: String,
        #[serde(default)]
        password: String,
        database: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationalConfig {
    #[serde(flatten)]
    pub connector: Connector,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default = "default_cap")]
    pub payload_cap_bytes: u64,
}

fn default_cap() -> u64 {
    DEFAULT_PAYLOAD_CAP
}

impl RelationalConfig {
    pub fn embedded(path: impl Into<PathBuf>) -> Self {
        Self {
            connector: Connector::Embedded { path: path.into() },
            timeouts: Timeouts::default(),
            payload_cap_bytes: DEFAULT_PAYLOAD_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceRow {
    pub evidence_id: EvidenceId,
    pub case_id: String,
    pub filename: String,
    pub media_type: String,
    pub submitter: String,
    pub description: String,
    pub size_bytes: u64,
    pub md5_hex: String,
    pub sha256_hex: String,
    pub created_at: DateTime<Utc>,
    pub payload: Vec<u8>,
}

impl EvidenceRow {
    /// Builds a row whose fingerprints are computed from the payload.
    pub fn new(evidence_id: EvidenceId, meta: &EvidenceMeta, payload: Vec<u8>) -> Self {
        Self {
            evidence_id,
            case_id: meta.case_id.clone(),
            filename: meta.filename.clone(),
            media_type: meta.media_type.clone(),
            submitter: meta.submitter.clone(),
            description: meta.description.clone(),
            size_bytes: payload.len() as u64,
            md5_hex: compute_md5(&payload).hex().to_string(),
            sha256_hex: compute_sha256(&payload).hex().to_string(),
            created_at: meta.submitted_at,
            payload,
        }
    }

    pub fn meta(&self) -> EvidenceMeta {
        EvidenceMeta {
            case_id: self.case_id.clone(),
            filename: self.filename.clone(),
            media_type: self.media_type.clone(),
            size_bytes: self.size_bytes,
            submitted_at: self.created_at,
            submitter: self.submitter.clone(),
            description: self.description.clone(),
        }
    }

    pub fn md5(&self) -> Result<Digest, RelationalError> {
        Digest::from_hex(HashAlgorithm::Md5, &self.md5_hex)
            .map_err(|e| RelationalError::IntegrityRejected(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceListing {
    pub evidence_id: EvidenceId,
    pub meta: EvidenceMeta,
    pub md5_hex: String,
}

fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.format(utc_seconds::FORMAT).to_string()
}

fn parse_ts(s: &str) -> rusqlite::Result<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, utc_seconds::FORMAT)
        .map(|n| n.and_utc())
        .map_err(|e| {
            rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
        })
}

fn parse_id(s: String) -> rusqlite::Result<EvidenceId> {
    s.parse().map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
    })
}

#[derive(Debug)]
pub struct RelationalStore {
    path: PathBuf,
    timeouts: Timeouts,
    payload_cap: u64,
    writer: Mutex<Connection>,
    readers: Mutex<Vec<Connection>>,
    payload_bytes_read: AtomicU64,
}

/// Opens the configured database and makes sure the evidence table exists.
/// Idempotent; an incompatible existing table is a `SchemaMismatch`.
pub fn init_schema(config: &RelationalConfig) -> Result<RelationalStore, RelationalError> {
    let path = match &config.connector {
        Connector::Embedded { path } => path.clone(),
        Connector::Server { host, port, database, .. } => {
            return Err(RelationalError::ConnectionFailed(format!(
                "no driver for external server {host}:{port}/{database} in this build; use the embedded engine"
            )))
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| RelationalError::ConnectionFailed(e.to_string()))?;
    }

    let writer = open_connection(&path, config.timeouts.write_secs, true)?;
    writer
        .pragma_update(None, "journal_mode", "WAL")
        .map_err(|e| RelationalError::ConnectionFailed(e.to_string()))?;

    let exists: Option<String> = writer
        .query_row(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name = ?1",
            [TABLE],
            |r| r.get(0),
        )
        .optional()?;
    if exists.is_some() {
        let mut stmt = writer.prepare("SELECT name FROM pragma_table_info(?1)")?;
        let present: Vec<String> = stmt
            .query_map([TABLE], |r| r.get(0))?
            .collect::<Result<_, _>>()?;
        let missing: Vec<&str> = COLUMNS
            .iter()
            .copied()
            .filter(|c| !present.iter().any(|p| p == c))
            .collect();
        if !missing.is_empty() {
            return Err(RelationalError::SchemaMismatch(format!(
                "existing `{TABLE}` table lacks columns: {}",
                missing.join(", ")
            )));
        }
        drop(stmt);
    } else {
        writer.execute_batch(
            "CREATE TABLE evidence (
                evidence_id TEXT PRIMARY KEY NOT NULL,
                case_id     TEXT NOT NULL,
                filename    TEXT NOT NULL,
                media_type  TEXT NOT NULL,
                submitter   TEXT NOT NULL,
                description TEXT NOT NULL DEFAULT '',
                size_bytes  INTEGER NOT NULL,
                md5_hex     TEXT NOT NULL,
                sha256_hex  TEXT NOT NULL,
                created_at  TEXT NOT NULL,
                payload     BLOB NOT NULL
            );",
        )?;
    }
    writer.execute_batch("CREATE INDEX IF NOT EXISTS evidence_case_id ON evidence(case_id);")?;

    Ok(RelationalStore {
        path,
        timeouts: config.timeouts,
        payload_cap: config.payload_cap_bytes,
        writer: Mutex::new(writer),
        readers: Mutex::new(Vec::new()),
        payload_bytes_read: AtomicU64::new(0),
    })
}

fn open_connection(
    path: &Path,
    busy_secs: u64,
    create: bool,
) -> Result<Connection, RelationalError> {
    let mut flags = OpenFlags::SQLITE_OPEN_READ_WRITE
        | OpenFlags::SQLITE_OPEN_NO_MUTEX
        | OpenFlags::SQLITE_OPEN_URI;
    if create {
        flags |= OpenFlags::SQLITE_OPEN_CREATE;
    }
    let conn = Connection::open_with_flags(path, flags)
        .map_err(|e| RelationalError::ConnectionFailed(format!("{}: {e}", path.display())))?;
    conn.busy_timeout(Duration::from_secs(busy_secs))
        .map_err(|e| RelationalError::ConnectionFailed(e.to_string()))?;
    // Forces the file header to be read so a non-database file fails here.
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| {
        r.get::<_, i64>(0)
    })
    .map_err(|e| RelationalError::ConnectionFailed(format!("{}: {e}", path.display())))?;
    Ok(conn)
}

impl RelationalStore {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn payload_cap(&self) -> u64 {
        self.payload_cap
    }

    /// Payload bytes handed out by `select_evidence` since the store opened.
    pub fn payload_bytes_read(&self) -> u64 {
        self.payload_bytes_read.load(Ordering::Relaxed)
    }

    fn with_reader<T>(
        &self,
        f: impl FnOnce(&Connection) -> Result<T, RelationalError>,
    ) -> Result<T, RelationalError> {
        let pooled = self.readers.lock().expect("reader pool poisoned").pop();
        let conn = match pooled {
            Some(c) => c,
            None => open_connection(&self.path, self.timeouts.read_secs, false)?,
        };
        let result = f(&conn);
        self.readers
            .lock()
            .expect("reader pool poisoned")
            .push(conn);
        result
    }

    /// Inserts a row after checking its size and both fingerprints against
    /// the payload.
    pub fn insert_evidence(&self, row: &EvidenceRow) -> Result<EvidenceId, RelationalError> {
        let size = row.payload.len() as u64;
        if size > self.payload_cap {
            return Err(RelationalError::PayloadTooLarge {
                size,
                cap: self.payload_cap,
            });
        }
        if row.size_bytes != size {
            return Err(RelationalError::IntegrityRejected(format!(
                "size_bytes {} but payload has {size} bytes",
                row.size_bytes
            )));
        }
        if row.md5_hex != compute_md5(&row.payload).hex() {
            return Err(RelationalError::IntegrityRejected(
                "md5_hex does not match payload".into(),
            ));
        }
        if row.sha256_hex != compute_sha256(&row.payload).hex() {
            return Err(RelationalError::IntegrityRejected(
                "sha256_hex does not match payload".into(),
            ));
        }

        let conn = self.writer.lock().expect("writer lock poisoned");
        let result = conn.execute(
            "INSERT INTO evidence (evidence_id, case_id, filename, media_type, submitter, description,
                                   size_bytes, md5_hex, sha256_hex, created_at, payload)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
            params![
                row.evidence_id.as_str(),
                row.case_id,
                row.filename,
                row.media_type,
                row.submitter,
                row.description,
                row.size_bytes as i64,
                row.md5_hex,
                row.sha256_hex,
                format_ts(&row.created_at),
                row.payload,
            ],
        );
        match result {
            Ok(_) => Ok(row.evidence_id.clone()),
            Err(rusqlite::Error::SqliteFailure(e, _))
                if e.code == ErrorCode::ConstraintViolation =>
            {
                Err(RelationalError::DuplicateKey(row.evidence_id.clone()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn select_evidence(&self, id: &EvidenceId) -> Result<EvidenceRow, RelationalError> {
        let row = self.with_reader(|conn| {
            conn.query_row(
                "SELECT evidence_id, case_id, filename, media_type, submitter, description,
                        size_bytes, md5_hex, sha256_hex, created_at, payload
                 FROM evidence WHERE evidence_id = ?1",
                [id.as_str()],
                |r| {
                    Ok(EvidenceRow {
                        evidence_id: parse_id(r.get(0)?)?,
                        case_id: r.get(1)?,
                        filename: r.get(2)?,
                        media_type: r.get(3)?,
                        submitter: r.get(4)?,
                        description: r.get(5)?,
                        size_bytes: r.get::<_, i64>(6)? as u64,
                        md5_hex: r.get(7)?,
                        sha256_hex: r.get(8)?,
                        created_at: parse_ts(&r.get::<_, String>(9)?)?,
                        payload: r.get(10)?,
                    })
                },
            )
            .optional()
            .map_err(RelationalError::from)
        })?;
        let row = row.ok_or_else(|| RelationalError::NotFound(id.clone()))?;
        self.payload_bytes_read
            .fetch_add(row.payload.len() as u64, Ordering::Relaxed);
        Ok(row)
    }

    /// Lists rows (optionally for one case) in `created_at` order. Payload
    /// bytes are never read.
    pub fn list_evidence(
        &self,
        case_filter: Option<&str>,
    ) -> Result<Vec<EvidenceListing>, RelationalError> {
        self.with_reader(|conn| {
            let mut stmt = conn.prepare(
                "SELECT evidence_id, case_id, filename, media_type, submitter, description,
                        size_bytes, md5_hex, created_at
                 FROM evidence
                 WHERE ?1 IS NULL OR case_id = ?1
                 ORDER BY created_at ASC, rowid ASC",
            )?;
            let rows = stmt.query_map([case_filter], |r| {
                Ok(EvidenceListing {
                    evidence_id: parse_id(r.get(0)?)?,
                    meta: EvidenceMeta {
                        case_id: r.get(1)?,
                        filename: r.get(2)?,
                        media_type: r.get(3)?,
                        submitter: r.get(4)?,
                        description: r.get(5)?,
                        size_bytes: r.get::<_, i64>(6)? as u64,
                        submitted_at: parse_ts(&r.get::<_, String>(8)?)?,
                    },
                    md5_hex: r.get(7)?,
                })
            })?;
            rows.collect::<Result<Vec<_>, _>>().map_err(Into::into)
        })
    }

    /// Recomputes MD5 over every stored payload and compares it with the
    /// stored fingerprint.
    pub fn verify_all(&self) -> Result<Vec<(EvidenceId, VerificationResult)>, RelationalError> {
        let ids: Vec<EvidenceId> = self
            .list_evidence(None)?
            .into_iter()
            .map(|l| l.evidence_id)
            .collect();
        ids.into_iter()
            .map(|id| {
                let row = self.select_evidence(&id)?;
                let expected = row.md5()?;
                Ok((id, verify_integrity(&row.payload, &expected)))
            })
            .collect()
    }

    pub fn contains(&self, id: &EvidenceId) -> Result<bool, RelationalError> {
        self.with_reader(|conn| {
            conn.query_row(
                "SELECT 1 FROM evidence WHERE evidence_id = ?1",
                [id.as_str()],
                |_| Ok(()),
            )
            .optional()
            .map(|hit| hit.is_some())
            .map_err(Into::into)
        })
    }

    pub fn count(&self) -> Result<u64, RelationalError> {
        self.with_reader(|conn| {
            conn.query_row("SELECT count(*) FROM evidence", [], |r| r.get::<_, i64>(0))
                .map(|n| n as u64)
                .map_err(Into::into)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{utc_from_unix, Verdict};

    fn meta(case: &str, ts: i64) -> EvidenceMeta {
        EvidenceMeta {
            case_id: case.into(),
            filename: "scene.glb".into(),
            media_type: "model/gltf-binary".into(),
            size_bytes: 0,
            submitted_at: utc_from_unix(ts),
            submitter: "examiner".into(),
            description: "crash reconstruction".into(),
        }
    }

    fn store() -> (tempfile::TempDir, RelationalStore) {
        let dir = tempfile::tempdir().unwrap();
        let store =
            init_schema(&RelationalConfig::embedded(dir.path().join("evidence.db"))).unwrap();
        (dir, store)
    }

    #[test]
    fn init_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let config = RelationalConfig::embedded(dir.path().join("e.db"));
        let first = init_schema(&config).unwrap();
        assert_eq!(first.count().unwrap(), 0);
        let row = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), b"x".to_vec());
        first.insert_evidence(&row).unwrap();
        drop(first);
        let second = init_schema(&config).unwrap();
        assert_eq!(second.count().unwrap(), 1);
    }

    #[test]
    fn incompatible_table_is_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.db");
        Connection::open(&path)
            .unwrap()
            .execute_batch("CREATE TABLE evidence (evidence_id TEXT PRIMARY KEY, payload BLOB);")
            .unwrap();
        match init_schema(&RelationalConfig::embedded(&path)) {
            Err(RelationalError::SchemaMismatch(msg)) => assert!(msg.contains("md5_hex")),
            other => panic!("expected schema mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_database_fails_to_connect() {
        let dir = tempfile::tempdir().unwrap();
        let not_a_db = dir.path().join("garbage.db");
        std::fs::write(&not_a_db, vec![0xAB; 4096]).unwrap();
        assert!(matches!(
            init_schema(&RelationalConfig::embedded(&not_a_db)),
            Err(RelationalError::ConnectionFailed(_))
        ));
        let server = RelationalConfig {
            connector: Connector::Server {
                host: "db.example".into(),
                port: 3306,
                user: "u".into(),
                password: String::new(),
                database: "twins".into(),
            },
            timeouts: Timeouts::default(),
            payload_cap_bytes: DEFAULT_PAYLOAD_CAP,
        };
        assert!(matches!(
            init_schema(&server),
            Err(RelationalError::ConnectionFailed(_))
        ));
    }

    #[test]
    fn insert_select_round_trip() {
        let (_dir, store) = store();
        let payload: Vec<u8> = (0..100_000u32).map(|i| (i % 253) as u8).collect();
        let row = EvidenceRow::new(
            EvidenceId::generate(),
            &meta("A", 1_700_000_000),
            payload.clone(),
        );
        let id = store.insert_evidence(&row).unwrap();
        let back = store.select_evidence(&id).unwrap();
        assert_eq!(back, row);
        assert_eq!(back.payload, payload);
        assert_eq!(back.md5_hex, compute_md5(&payload).hex());
    }

    #[test]
    fn empty_payload_row() {
        let (_dir, store) = store();
        let row = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), Vec::new());
        let id = store.insert_evidence(&row).unwrap();
        let back = store.select_evidence(&id).unwrap();
        assert!(back.payload.is_empty());
        assert_eq!(back.md5_hex, "d41d8cd98f00b204e9800998ecf8427e");
    }

    #[test]
    fn duplicate_and_mislabeled_rows_are_refused() {
        let (_dir, store) = store();
        let row = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), b"abc".to_vec());
        store.insert_evidence(&row).unwrap();
        assert!(matches!(
            store.insert_evidence(&row),
            Err(RelationalError::DuplicateKey(_))
        ));

        let mut bad = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), b"abc".to_vec());
        bad.md5_hex = compute_md5(b"abd").hex().to_string();
        assert!(matches!(
            store.insert_evidence(&bad),
            Err(RelationalError::IntegrityRejected(_))
        ));

        let mut bad_size = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), b"abc".to_vec());
        bad_size.size_bytes = 4;
        assert!(matches!(
            store.insert_evidence(&bad_size),
            Err(RelationalError::IntegrityRejected(_))
        ));
        assert_eq!(store.count().unwrap(), 1);
    }

    #[test]
    fn payload_cap_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RelationalConfig::embedded(dir.path().join("cap.db"));
        config.payload_cap_bytes = 10;
        let store = init_schema(&config).unwrap();
        let row = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), vec![0; 11]);
        assert!(matches!(
            store.insert_evidence(&row),
            Err(RelationalError::PayloadTooLarge { size: 11, cap: 10 })
        ));
    }

    #[test]
    fn unknown_id_is_not_found() {
        let (_dir, store) = store();
        assert!(matches!(
            store.select_evidence(&EvidenceId::generate()),
            Err(RelationalError::NotFound(_))
        ));
    }

    #[test]
    fn listing_filters_orders_and_skips_payloads() {
        let (_dir, store) = store();
        assert!(store.list_evidence(None).unwrap().is_empty());
        let big = vec![1u8; 2_000_000];
        let rows = [
            EvidenceRow::new(EvidenceId::generate(), &meta("B", 30), big.clone()),
            EvidenceRow::new(EvidenceId::generate(), &meta("A", 10), big.clone()),
            EvidenceRow::new(EvidenceId::generate(), &meta("A", 20), big),
        ];
        for r in &rows {
            store.insert_evidence(r).unwrap();
        }
        let all = store.list_evidence(None).unwrap();
        let ids: Vec<_> = all.iter().map(|l| l.evidence_id.clone()).collect();
        assert_eq!(
            ids,
            vec![
                rows[1].evidence_id.clone(),
                rows[2].evidence_id.clone(),
                rows[0].evidence_id.clone()
            ]
        );
        let case_a = store.list_evidence(Some("A")).unwrap();
        assert_eq!(case_a.len(), 2);
        assert!(case_a.iter().all(|l| l.meta.case_id == "A"));
        assert_eq!(store.payload_bytes_read(), 0);
    }

    #[test]
    fn sweep_flags_out_of_band_tamper() {
        let (_dir, store) = store();
        let row = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), b"pristine".to_vec());
        store.insert_evidence(&row).unwrap();
        assert!(store.verify_all().unwrap().iter().all(|(_, v)| v.passed()));

        Connection::open(store.path())
            .unwrap()
            .execute(
                "UPDATE evidence SET payload = ?1 WHERE evidence_id = ?2",
                params![b"prisTine".to_vec(), row.evidence_id.as_str()],
            )
            .unwrap();
        let sweep = store.verify_all().unwrap();
        assert_eq!(sweep[0].1.verdict, Verdict::Fail);
    }

    #[test]
    fn concurrent_readers_and_writer() {
        let (_dir, store) = store();
        let seed = EvidenceRow::new(EvidenceId::generate(), &meta("A", 1), vec![9; 50_000]);
        store.insert_evidence(&seed).unwrap();
        std::thread::scope(|s| {
            s.spawn(|| {
                for i in 0..20 {
                    let row = EvidenceRow::new(
                        EvidenceId::generate(),
                        &meta("W", i),
                        vec![i as u8; 10_000],
                    );
                    store.insert_evidence(&row).unwrap();
                }
            });
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..20 {
                        assert_eq!(
                            store
                                .select_evidence(&seed.evidence_id)
                                .unwrap()
                                .payload
                                .len(),
                            50_000
                        );
                        for listing in store.list_evidence(Some("W")).unwrap() {
                            let row = store.select_evidence(&listing.evidence_id).unwrap();
                            assert_eq!(row.payload.len(), 10_000);
                        }
                    }
                });
            }
        });
        assert_eq!(store.count().unwrap(), 21);
    }
}
