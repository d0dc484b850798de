//! Evidence domain types and cryptographic fingerprinting.
//!
//! Every payload entering the system is fingerprinted with MD5 (the
//! integrity verdict uses MD5 only) and SHA-256 (kept alongside because
//! MD5 is not collision resistant). Digests render as `md5:<hex>` and
//! `sha256:<hex>` in every file format and API.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, TimeZone, Utc};
use md5::Md5;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("unsupported digest algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("malformed digest `{0}`")]
    MalformedDigest(String),
    #[error("malformed evidence id `{0}`")]
    MalformedEvidenceId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HashAlgorithm {
    Md5,
    Sha256,
}

impl HashAlgorithm {
    pub fn prefix(self) -> &'static str {
        match self {
            HashAlgorithm::Md5 => "md5",
            HashAlgorithm::Sha256 => "sha256",
        }
    }

    pub fn hex_len(self) -> usize {
        match self {
            HashAlgorithm::Md5 => 32,
            HashAlgorithm::Sha256 => 64,
        }
    }
}

impl FromStr for HashAlgorithm {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md5" => Ok(HashAlgorithm::Md5),
            "sha256" => Ok(HashAlgorithm::Sha256),
            other => Err(EvidenceError::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

/// A fingerprint: algorithm plus lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Digest {
    algorithm: HashAlgorithm,
    hex: String,
}

impl Digest {
    /// Builds a digest from hex, normalizing nothing: the hex must already be
    /// lowercase and of the algorithm's length.
    pub fn from_hex(algorithm: HashAlgorithm, hex: &str) -> Result<Self, EvidenceError> {
        if !is_lower_hex(hex, algorithm.hex_len()) {
            return Err(EvidenceError::MalformedDigest(format!(
                "{}:{hex}",
                algorithm.prefix()
            )));
        }
        Ok(Self {
            algorithm,
            hex: hex.to_string(),
        })
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.algorithm
    }

    pub fn hex(&self) -> &str {
        &self.hex
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm.prefix(), self.hex)
    }
}

impl FromStr for Digest {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (prefix, hex) = s
            .split_once(':')
            .ok_or_else(|| EvidenceError::MalformedDigest(s.to_string()))?;
        let algorithm = prefix.parse::<HashAlgorithm>()?;
        Digest::from_hex(algorithm, hex)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) fn is_lower_hex(s: &str, len: usize) -> bool {
    s.len() == len && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn compute_md5(payload: &[u8]) -> Digest {
    Digest {
        algorithm: HashAlgorithm::Md5,
        hex: hex::encode(Md5::digest(payload)),
    }
}

pub fn compute_sha256(payload: &[u8]) -> Digest {
    Digest {
        algorithm: HashAlgorithm::Sha256,
        hex: hex::encode(Sha256::digest(payload)),
    }
}

pub fn compute_digest(algorithm: HashAlgorithm, payload: &[u8]) -> Digest {
    match algorithm {
        HashAlgorithm::Md5 => compute_md5(payload),
        HashAlgorithm::Sha256 => compute_sha256(payload),
    }
}

/// 128-bit random evidence identifier, rendered as 32 lowercase hex chars.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvidenceId(String);

impl EvidenceId {
    pub fn generate() -> Self {
        let mut bytes = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut bytes);
        EvidenceId(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EvidenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for EvidenceId {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if is_lower_hex(s, 32) {
            Ok(EvidenceId(s.to_string()))
        } else {
            Err(EvidenceError::MalformedEvidenceId(s.to_string()))
        }
    }
}

impl Serialize for EvidenceId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EvidenceId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Serde helpers for UTC timestamps at one-second resolution
/// (`YYYY-MM-DDTHH:MM:SSZ`).
pub mod utc_seconds {
    use chrono::{DateTime, NaiveDateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub const FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&ts.format(FORMAT))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(deserializer)?;
        NaiveDateTime::parse_from_str(&s, FORMAT)
            .map(|naive| naive.and_utc())
            .map_err(serde::de::Error::custom)
    }
}

/// Truncates a timestamp to whole seconds.
pub fn to_seconds(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.trunc_subsecs(0)
}

pub fn utc_from_unix(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(secs, 0).single().unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceMeta {
    pub case_id: String,
    pub filename: String,
    pub media_type: String,
    pub size_bytes: u64,
    #[serde(with = "utc_seconds")]
    pub submitted_at: DateTime<Utc>,
    pub submitter: String,
    #[serde(default)]
    pub description: String,
}

impl EvidenceMeta {
    /// Metadata for a payload submitted now.
    pub fn for_payload(
        payload: &[u8],
        case_id: impl Into<String>,
        filename: impl Into<String>,
        media_type: impl Into<String>,
        submitter: impl Into<String>,
    ) -> Self {
        Self {
            case_id: case_id.into(),
            filename: filename.into(),
            media_type: media_type.into(),
            size_bytes: payload.len() as u64,
            submitted_at: to_seconds(Utc::now()),
            submitter: submitter.into(),
            description: String::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub verdict: Verdict,
    pub expected: Digest,
    pub actual: Digest,
}

impl VerificationResult {
    pub fn compare(expected: Digest, actual: Digest) -> Self {
        let verdict = if expected == actual {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            verdict,
            expected,
            actual,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Recomputes the payload digest with the expected digest's algorithm and
/// compares.
pub fn verify_integrity(payload: &[u8], expected: &Digest) -> VerificationResult {
    let actual = compute_digest(expected.algorithm(), payload);
    VerificationResult::compare(expected.clone(), actual)
}

/// Like [`verify_integrity`] but takes the expected digest in its rendered
/// form, so an unknown algorithm surfaces as a configuration error.
pub fn verify_integrity_str(
    payload: &[u8],
    expected: &str,
) -> Result<VerificationResult, EvidenceError> {
    let expected: Digest = expected.parse()?;
    Ok(verify_integrity(payload, &expected))
}
