//! Timed POST/GET experiments over both backends and the report built from
//! them.
//!
//! For every size the runner stores `repetitions` payloads on each backend,
//! then retrieves each stored item once per repetition. Operations run
//! strictly one after another on a single thread.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendConfig, BackendError, BackendKind, EvidenceBackend, LatencyModel, LatencySettings,
    Locator,
};
use crate::evidence::EvidenceMeta;
use crate::stats::{self, DescriptiveStats, EffectSize, Pooling, RegressionFit};

/// Decimal megabyte, the unit of the network-rate and file-size framing.
pub const MB: u64 = 1_000_000;

pub const CSV_HEADER: &str = "operation,backend,size_bytes,run_index,seconds";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("no run records to analyze")]
    NoRecords,
    #[error("benchmark aborted after {} records: {reason}", partial.len())]
    Aborted {
        partial: Vec<RunRecord>,
        reason: String,
    },
    #[error("backend setup failed: {0}")]
    Setup(#[from] BackendError),
    #[error("cannot write report: {0}")]
    Io(#[from] io::Error),
    #[error("report is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operation {
    #[serde(rename = "POST")]
    Post,
    #[serde(rename = "GET")]
    Get,
}

impl Operation {
    pub const ALL: [Operation; 2] = [Operation::Post, Operation::Get];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Post => "POST",
            Operation::Get => "GET",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub sizes_bytes: Vec<u64>,
    pub repetitions: u32,
    pub seed: u64,
    pub backends: BTreeSet<BackendKind>,
    pub operations: BTreeSet<Operation>,
    pub latency: LatencyModel,
}

impl WorkloadSpec {
    /// 1, 2, 5, 10 and 20 MB, three repetitions, both backends and
    /// operations, no simulated latency.
    pub fn desk_scale() -> Self {
        Self::with_sizes_mb(&[1, 2, 5, 10, 20])
    }

    /// Ten sizes spanning 1 to 200 MB. Takes far longer than the desk-scale
    /// default and needs a few GB of disk.
    pub fn full_range() -> Self {
        Self::with_sizes_mb(&[1, 5, 10, 20, 40, 60, 80, 120, 160, 200])
    }

    pub fn with_sizes_mb(sizes_mb: &[u64]) -> Self {
        Self {
            sizes_bytes: sizes_mb.iter().map(|s| s * MB).collect(),
            repetitions: 3,
            seed: 42,
            backends: BackendKind::ALL.into_iter().collect(),
            operations: Operation::ALL.into_iter().collect(),
            latency: LatencyModel::disabled(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.sizes_bytes.is_empty() {
            return Err(BenchError::InvalidSpec("no sizes".into()));
        }
        if self.sizes_bytes.contains(&0) {
            return Err(BenchError::InvalidSpec("sizes must be positive".into()));
        }
        if self.sizes_bytes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::InvalidSpec(
                "sizes must be strictly increasing".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(BenchError::InvalidSpec(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.backends.is_empty() || self.operations.is_empty() {
            return Err(BenchError::InvalidSpec(
                "need at least one backend and one operation".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic pseudorandom payload for the `index`-th size of a workload.
pub fn generate_payload(seed: u64, index: usize, size: u64) -> Vec<u8> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut payload = vec![0u8; size as usize];
    rng.fill_bytes(&mut payload);
    payload
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<(u64, Vec<u8>)>, BenchError> {
    spec.validate()?;
    Ok(spec
        .sizes_bytes
        .iter()
        .enumerate()
        .map(|(i, &size)| (size, generate_payload(spec.seed, i, size)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub operation: Operation,
    pub backend: BackendKind,
    pub size_bytes: u64,
    pub run_index: u32,
    pub seconds: f64,
}

/// Runs the workload against `backend`, which should start empty and have
/// every backend named in the spec configured.
pub fn run_benchmark(
    spec: &WorkloadSpec,
    backend: &EvidenceBackend,
) -> Result<Vec<RunRecord>, BenchError> {
    spec.validate()?;
    let mut records = Vec::new();
    let abort = |records: &mut Vec<RunRecord>, e: BackendError| BenchError::Aborted {
        partial: std::mem::take(records),
        reason: e.to_string(),
    };

    for (index, &size) in spec.sizes_bytes.iter().enumerate() {
        let payload = generate_payload(spec.seed, index, size);
        let mut stored: Vec<(BackendKind, u32, Locator)> = Vec::new();

        for &kind in &spec.backends {
            for run_index in 0..spec.repetitions {
                let meta = EvidenceMeta::for_payload(
                    &payload,
                    format!("bench-{}", spec.seed),
                    format!("workload-{index}-{run_index}.bin"),
                    "application/octet-stream",
                    "bench",
                );
                let receipt = backend
                    .post_evidence(kind, &payload, meta)
                    .map_err(|e| abort(&mut records, e))?;
                if spec.operations.contains(&Operation::Post) {
                    records.push(RunRecord {
                        operation: Operation::Post,
                        backend: kind,
                        size_bytes: size,
                        run_index,
                        seconds: receipt.timing.seconds,
                    });
                }
                stored.push((kind, run_index, receipt.locator));
            }
        }

        if spec.operations.contains(&Operation::Get) {
            for (kind, run_index, locator) in &stored {
                let retrieval = backend
                    .get_evidence(locator)
                    .map_err(|e| abort(&mut records, e))?;
                records.push(RunRecord {
                    operation: Operation::Get,
                    backend: *kind,
                    size_bytes: size,
                    run_index: *run_index,
                    seconds: retrieval.timing.seconds,
                });
            }
        }
    }
    Ok(records)
}

/// Creates fresh stores under `work_dir` using the spec's latency model and
/// runs the workload there.
pub fn run_benchmark_in(
    spec: &WorkloadSpec,
    work_dir: &Path,
) -> Result<Vec<RunRecord>, BenchError> {
    spec.validate()?;
    if work_dir.exists() && fs::read_dir(work_dir)?.next().is_some() {
        return Err(BenchError::InvalidSpec(format!(
            "work directory {} is not empty",
            work_dir.display()
        )));
    }
    let mut config = BackendConfig::in_dir(work_dir);
    config.latency = LatencySettings::uniform(spec.latency);
    let kinds: Vec<BackendKind> = spec.backends.iter().copied().collect();
    let backend = EvidenceBackend::open(&config, &kinds)?;
    run_benchmark(spec, &backend)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeUnit {
    Bytes,
    Mb,
}

impl SizeUnit {
    fn divisor(self) -> f64 {
        match self {
            SizeUnit::Bytes => 1.0,
            SizeUnit::Mb => MB as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub operation: Operation,
    pub backend: BackendKind,
    #[serde(flatten)]
    pub stats: DescriptiveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeRow {
    pub operation: Operation,
    /// Group A (numerator's first mean).
    pub group_a: BackendKind,
    pub group_b: BackendKind,
    pub effect: Option<EffectSize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub operation: Operation,
    pub backend: BackendKind,
    pub unit: SizeUnit,
    pub fit: Option<RegressionFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PctDifferenceRow {
    pub operation: Operation,
    pub faster: BackendKind,
    pub slower: BackendKind,
    pub mean_fast_s: f64,
    pub mean_slow_s: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: WorkloadSpec,
    pub records: Vec<RunRecord>,
    pub descriptives: Vec<DescriptiveRow>,
    pub effect_sizes: Vec<EffectSizeRow>,
    pub regressions: Vec<RegressionRow>,
    pub pct_differences: Vec<PctDifferenceRow>,
}

impl BenchReport {
    pub fn descriptive(
        &self,
        operation: Operation,
        backend: BackendKind,
    ) -> Option<&DescriptiveStats> {
        self.descriptives
            .iter()
            .find(|r| r.operation == operation && r.backend == backend)
            .map(|r| &r.stats)
    }
}

fn seconds_of(records: &[RunRecord], op: Operation, kind: BackendKind) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.operation == op && r.backend == kind)
        .map(|r| r.seconds)
        .collect()
}

/// Builds the full statistical report from raw records. Pure: the same
/// records always give the same report.
pub fn analyze(
    spec: &WorkloadSpec,
    records: &[RunRecord],
    pooling: Pooling,
) -> Result<BenchReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let mut descriptives = Vec::new();
    let mut regressions = Vec::new();
    let mut effect_sizes = Vec::new();
    let mut pct_differences = Vec::new();

    for op in Operation::ALL {
        for kind in BackendKind::ALL {
            let samples = seconds_of(records, op, kind);
            let Ok(stats) = stats::descriptive(&samples) else {
                continue;
            };
            descriptives.push(DescriptiveRow {
                operation: op,
                backend: kind,
                stats,
            });
            for unit in [SizeUnit::Bytes, SizeUnit::Mb] {
                let points: Vec<(f64, f64)> = records
                    .iter()
                    .filter(|r| r.operation == op && r.backend == kind)
                    .map(|r| (r.size_bytes as f64 / unit.divisor(), r.seconds))
                    .collect();
                let (fit, error) = match stats::linear_fit(&points) {
                    Ok(fit) => (Some(fit), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                regressions.push(RegressionRow {
                    operation: op,
                    backend: kind,
                    unit,
                    fit,
                    error,
                });
            }
        }

        let ledger = seconds_of(records, op, BackendKind::LedgerCas);
        let sql = seconds_of(records, op, BackendKind::Relational);
        if ledger.is_empty() || sql.is_empty() {
            continue;
        }
        let (effect, error) = match stats::cohens_d_with(&ledger, &sql, pooling) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
        effect_sizes.push(EffectSizeRow {
            operation: op,
            group_a: BackendKind::LedgerCas,
            group_b: BackendKind::Relational,
            effect,
            error,
        });

        let mean_ledger = stats::mean_time(&ledger).expect("non-empty");
        let mean_sql = stats::mean_time(&sql).expect("non-empty");
        let ((slower, mean_slow), (faster, mean_fast)) = if mean_ledger >= mean_sql {
            (
                (BackendKind::LedgerCas, mean_ledger),
                (BackendKind::Relational, mean_sql),
            )
        } else {
            (
                (BackendKind::Relational, mean_sql),
                (BackendKind::LedgerCas, mean_ledger),
            )
        };
        if let Ok(percent) = stats::pct_difference(mean_slow, mean_fast) {
            pct_differences.push(PctDifferenceRow {
                operation: op,
                faster,
                slower,
                mean_fast_s: mean_fast,
                mean_slow_s: mean_slow,
                percent,
            });
        }
    }

    Ok(BenchReport {
        spec: spec.clone(),
        records: records.to_vec(),
        descriptives,
        effect_sizes,
        regressions,
        pct_differences,
    })
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.operation, r.backend, r.size_bytes, r.run_index, r.seconds
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub csv: PathBuf,
}

/// Analyzes `records` and writes `report.json` and `records.csv` into
/// `destination`.
pub fn emit_report(
    spec: &WorkloadSpec,
    records: &[RunRecord],
    pooling: Pooling,
    destination: &Path,
) -> Result<(BenchReport, ReportFiles), BenchError> {
    let report = analyze(spec, records, pooling)?;
    fs::create_dir_all(destination)?;
    let files = ReportFiles {
        json: destination.join("report.json"),
        csv: destination.join("records.csv"),
    };
    let mut json = fs::File::create(&files.json)?;
    serde_json::to_writer_pretty(&mut json, &report)?;
    json.write_all(b"\n")?;
    fs::write(&files.csv, records_csv(records))?;
    Ok((report, files))
}

pub fn read_report(path: &Path) -> Result<BenchReport, BenchError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
