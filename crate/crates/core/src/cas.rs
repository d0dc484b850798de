//! Content-addressed chunk store.
//!
//! Payloads are split into fixed-size chunks and addressed by the root of a
//! binary Merkle tree over domain-separated chunk hashes:
//!
//! * `leaf = SHA256(0x00 ‖ chunk)`
//! * `node = SHA256(0x01 ‖ left ‖ right)`
//! * an odd node at any level is promoted unchanged
//!
//! The identifier renders as `twin-cas-v1:<root hex>`. It is not wire
//! compatible with IPFS CIDs.
//!
//! On disk a store is one directory:
//!
//! ```text
//! store.json                 scheme + chunk size, fixed at creation
//! chunks/<aa>/<leaf hex>     raw chunk bytes, named by leaf hash
//! manifests/<aa>/<root hex>  ordered leaf list for one content id
//! pins.json                  {"pins":[{"cid":..,"pinned_at":..,"ref_count":N}]}
//! ```
//!
//! A manifest is only written after all of its chunks are in place, so a
//! concurrent reader sees an in-flight put as `NotFound`.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evidence::is_lower_hex;

pub const CHUNK_SIZE: usize = 262_144;
pub const SCHEME: &str = "twin-cas-v1";

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

#[derive(Debug, Error)]
pub enum CasError {
    #[error("content {0} not found")]
    NotFound(ContentId),
    #[error("integrity violation in {cid}{}: {reason}", chunk_index.map(|i| format!(" at chunk {i}")).unwrap_or_default())]
    IntegrityViolation {
        cid: ContentId,
        chunk_index: Option<usize>,
        reason: String,
    },
    #[error("I/O failure for {}: {source}", cid.as_ref().map(ToString::to_string).unwrap_or_else(|| "store".into()))]
    Io {
        cid: Option<ContentId>,
        #[source]
        source: io::Error,
    },
    #[error("malformed content id `{0}`")]
    MalformedContentId(String),
    #[error("store configuration: {0}")]
    Config(String),
}

impl CasError {
    fn io(cid: &ContentId) -> impl FnOnce(io::Error) -> CasError + '_ {
        move |source| CasError::Io {
            cid: Some(cid.clone()),
            source,
        }
    }
}

/// Merkle-root content identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentId {
    root: String,
}

impl ContentId {
    pub fn from_root_hex(root: &str) -> Result<Self, CasError> {
        if is_lower_hex(root, 64) {
            Ok(Self {
                root: root.to_string(),
            })
        } else {
            Err(CasError::MalformedContentId(root.to_string()))
        }
    }

    fn from_root(root: [u8; 32]) -> Self {
        Self {
            root: hex::encode(root),
        }
    }

    pub fn root_hex(&self) -> &str {
        &self.root
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{SCHEME}:{}", self.root)
    }
}

impl FromStr for ContentId {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((SCHEME, root)) => ContentId::from_root_hex(root),
            _ => Err(CasError::MalformedContentId(s.to_string())),
        }
    }
}

impl Serialize for ContentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk<'a> {
    pub index: usize,
    pub bytes: &'a [u8],
}

/// Splits a payload into `chunk_size` pieces. An empty payload yields one
/// empty chunk.
pub fn chunk_payload_with_size(payload: &[u8], chunk_size: usize) -> Vec<Chunk<'_>> {
    assert!(chunk_size > 0, "chunk size must be positive");
    if payload.is_empty() {
        return vec![Chunk {
            index: 0,
            bytes: payload,
        }];
    }
    payload
        .chunks(chunk_size)
        .enumerate()
        .map(|(index, bytes)| Chunk { index, bytes })
        .collect()
}

pub fn chunk_payload(payload: &[u8]) -> Vec<Chunk<'_>> {
    chunk_payload_with_size(payload, CHUNK_SIZE)
}

fn leaf_hash(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(bytes);
    h.finalize().into()
}

fn node_hash(left: &[u8; 32], right: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left);
    h.update(right);
    h.finalize().into()
}

fn merkle_root(mut level: Vec<[u8; 32]>) -> [u8; 32] {
    debug_assert!(!level.is_empty());
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node_hash(l, r),
                [odd] => *odd,
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}

fn leaves(payload: &[u8], chunk_size: usize) -> Vec<[u8; 32]> {
    chunk_payload_with_size(payload, chunk_size)
        .iter()
        .map(|c| leaf_hash(c.bytes))
        .collect()
}

pub fn content_id_with_chunk_size(payload: &[u8], chunk_size: usize) -> ContentId {
    ContentId::from_root(merkle_root(leaves(payload, chunk_size)))
}

pub fn content_id(payload: &[u8]) -> ContentId {
    content_id_with_chunk_size(payload, CHUNK_SIZE)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinRecord {
    #[serde(rename = "cid")]
    pub content_id: ContentId,
    pub pinned_at: DateTime<Utc>,
    pub ref_count: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct PinIndex {
    pins: Vec<PinRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    scheme: String,
    chunk_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    cid: ContentId,
    size: u64,
    leaves: Vec<String>,
}

/// A content-addressed store rooted at one directory.
#[derive(Debug)]
pub struct CasStore {
    root: PathBuf,
    chunk_size: usize,
    pins: Mutex<PinIndex>,
}

impl CasStore {
    /// Opens (or creates) a store with the default chunk size.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CasError> {
        Self::open_with_chunk_size(root, CHUNK_SIZE)
    }

    /// Opens a store, creating it with `chunk_size` if absent. An existing
    /// store created with another chunk size is rejected.
    pub fn open_with_chunk_size(
        root: impl AsRef<Path>,
        chunk_size: usize,
    ) -> Result<Self, CasError> {
        if chunk_size == 0 {
            return Err(CasError::Config("chunk size must be positive".into()));
        }
        let root = root.as_ref().to_path_buf();
        let store_io = |source| CasError::Io { cid: None, source };
        fs::create_dir_all(root.join("chunks")).map_err(store_io)?;
        fs::create_dir_all(root.join("manifests")).map_err(store_io)?;

        let meta_path = root.join("store.json");
        if meta_path.exists() {
            let meta: StoreMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(store_io)?)
                .map_err(|e| CasError::Config(format!("unreadable store.json: {e}")))?;
            if meta.scheme != SCHEME {
                return Err(CasError::Config(format!("unknown scheme {}", meta.scheme)));
            }
            if meta.chunk_size != chunk_size {
                return Err(CasError::Config(format!(
                    "store was created with chunk size {}, requested {chunk_size}",
                    meta.chunk_size
                )));
            }
        } else {
            let meta = StoreMeta {
                scheme: SCHEME.to_string(),
                chunk_size,
            };
            write_atomic(
                &meta_path,
                &serde_json::to_vec(&meta).expect("store meta serializes"),
            )
            .map_err(store_io)?;
        }

        let pins_path = root.join("pins.json");
        let pins = if pins_path.exists() {
            serde_json::from_slice(&fs::read(&pins_path).map_err(store_io)?)
                .map_err(|e| CasError::Config(format!("unreadable pins.json: {e}")))?
        } else {
            PinIndex::default()
        };

        Ok(Self {
            root,
            chunk_size,
            pins: Mutex::new(pins),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn content_id(&self, payload: &[u8]) -> ContentId {
        content_id_with_chunk_size(payload, self.chunk_size)
    }

    fn chunk_file(&self, leaf_hex: &str) -> PathBuf {
        self.root.join("chunks").join(&leaf_hex[..2]).join(leaf_hex)
    }

    fn manifest_file(&self, cid: &ContentId) -> PathBuf {
        let root = cid.root_hex();
        self.root
            .join("manifests")
            .join(&root[..2])
            .join(format!("{root}.json"))
    }

    /// Stores a payload and pins it. Identical content is deduplicated; only
    /// the pin's reference count changes.
    pub fn put(&self, payload: &[u8]) -> Result<ContentId, CasError> {
        let leaf_hashes = leaves(payload, self.chunk_size);
        let cid = ContentId::from_root(merkle_root(leaf_hashes.clone()));
        let leaf_hex: Vec<String> = leaf_hashes.iter().map(hex::encode).collect();

        for (chunk, hex) in chunk_payload_with_size(payload, self.chunk_size)
            .iter()
            .zip(&leaf_hex)
        {
            let path = self.chunk_file(hex);
            if !path.exists() {
                write_atomic(&path, chunk.bytes).map_err(CasError::io(&cid))?;
            }
        }

        let mut pins = self.pins.lock().expect("pin index lock poisoned");
        let manifest_path = self.manifest_file(&cid);
        if !manifest_path.exists() {
            let manifest = Manifest {
                cid: cid.clone(),
                size: payload.len() as u64,
                leaves: leaf_hex,
            };
            let bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
            write_atomic(&manifest_path, &bytes).map_err(CasError::io(&cid))?;
        }

        let previous = match pins.pins.iter_mut().find(|p| p.content_id == cid) {
            Some(pin) => {
                pin.ref_count += 1;
                Some(pin.ref_count - 1)
            }
            None => {
                pins.pins.push(PinRecord {
                    content_id: cid.clone(),
                    pinned_at: Utc::now(),
                    ref_count: 1,
                });
                None
            }
        };
        let bytes = serde_json::to_vec(&*pins).expect("pin index serializes");
        if let Err(e) = write_atomic(&self.root.join("pins.json"), &bytes) {
            match previous {
                Some(count) => {
                    if let Some(pin) = pins.pins.iter_mut().find(|p| p.content_id == cid) {
                        pin.ref_count = count;
                    }
                }
                None => {
                    pins.pins.pop();
                }
            }
            return Err(CasError::Io {
                cid: Some(cid),
                source: e,
            });
        }
        Ok(cid)
    }

    fn read_manifest(&self, id: &ContentId) -> Result<Manifest, CasError> {
        let bytes = match fs::read(self.manifest_file(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(CasError::NotFound(id.clone()))
            }
            Err(e) => return Err(CasError::io(id)(e)),
        };
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| CasError::IntegrityViolation {
                cid: id.clone(),
                chunk_index: None,
                reason: format!("unreadable manifest: {e}"),
            })?;
        if manifest.cid != *id || manifest.leaves.is_empty() {
            return Err(CasError::IntegrityViolation {
                cid: id.clone(),
                chunk_index: None,
                reason: "manifest does not describe this content".into(),
            });
        }
        Ok(manifest)
    }

    /// Returns the original payload, verifying every chunk and the Merkle
    /// root on the way out.
    pub fn get(&self, id: &ContentId) -> Result<Vec<u8>, CasError> {
        let manifest = self.read_manifest(id)?;
        let violation = |chunk_index: Option<usize>, reason: String| CasError::IntegrityViolation {
            cid: id.clone(),
            chunk_index,
            reason,
        };

        let mut recomputed = Vec::with_capacity(manifest.leaves.len());
        let mut payload = Vec::with_capacity(manifest.size as usize);
        for (index, leaf_hex) in manifest.leaves.iter().enumerate() {
            if !is_lower_hex(leaf_hex, 64) {
                return Err(violation(
                    Some(index),
                    "malformed leaf hash in manifest".into(),
                ));
            }
            let bytes = match fs::read(self.chunk_file(leaf_hex)) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    return Err(violation(Some(index), "chunk file missing".into()))
                }
                Err(e) => return Err(CasError::io(id)(e)),
            };
            let leaf = leaf_hash(&bytes);
            if hex::encode(leaf) != *leaf_hex {
                return Err(violation(Some(index), "chunk hash mismatch".into()));
            }
            recomputed.push(leaf);
            payload.extend_from_slice(&bytes);
        }
        if ContentId::from_root(merkle_root(recomputed)) != *id {
            return Err(violation(None, "merkle root mismatch".into()));
        }
        if payload.len() as u64 != manifest.size {
            return Err(violation(None, "payload length mismatch".into()));
        }
        Ok(payload)
    }

    /// Concatenates the stored chunks without any verification. Used to
    /// report the digest of corrupted content.
    pub fn get_unverified(&self, id: &ContentId) -> Result<Vec<u8>, CasError> {
        let manifest = self.read_manifest(id)?;
        let mut payload = Vec::with_capacity(manifest.size as usize);
        for leaf_hex in manifest.leaves.iter().filter(|h| is_lower_hex(h, 64)) {
            match fs::read(self.chunk_file(leaf_hex)) {
                Ok(bytes) => payload.extend_from_slice(&bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(CasError::io(id)(e)),
            }
        }
        Ok(payload)
    }

    pub fn contains(&self, id: &ContentId) -> bool {
        self.manifest_file(id).exists()
    }

    pub fn pin(&self, id: &ContentId) -> Option<PinRecord> {
        let pins = self.pins.lock().expect("pin index lock poisoned");
        pins.pins.iter().find(|p| p.content_id == *id).cloned()
    }

    pub fn pins(&self) -> Vec<PinRecord> {
        self.pins
            .lock()
            .expect("pin index lock poisoned")
            .pins
            .clone()
    }

    /// Paths of the chunk files backing `id`, in chunk order.
    pub fn chunk_paths(&self, id: &ContentId) -> Result<Vec<PathBuf>, CasError> {
        let manifest = self.read_manifest(id)?;
        Ok(manifest.leaves.iter().map(|h| self.chunk_file(h)).collect())
    }

    /// Total bytes held in chunk files.
    pub fn stored_chunk_bytes(&self) -> Result<u64, CasError> {
        let mut total = 0;
        let io = |source| CasError::Io { cid: None, source };
        for fan in fs::read_dir(self.root.join("chunks")).map_err(io)? {
            let fan = fan.map_err(io)?;
            if !fan.file_type().map_err(io)?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(fan.path()).map_err(io)? {
                let entry = entry.map_err(io)?;
                if !entry.file_name().to_string_lossy().starts_with(".tmp") {
                    total += entry.metadata().map_err(io)?.len();
                }
            }
        }
        Ok(total)
    }
}

/// Writes via a uniquely named temp file and a rename, so readers never see
/// a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    fs::create_dir_all(dir)?;
    let mut nonce = [0u8; 8];
    rand::thread_rng().fill_bytes(&mut nonce);
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        hex::encode(nonce)
    ));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
