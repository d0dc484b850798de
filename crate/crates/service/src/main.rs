use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use twinvault_core::backend::{BackendKind, EvidenceBackend, LatencyModel, Locator};
use twinvault_core::bench::{self, WorkloadSpec, MB};
use twinvault_core::evidence::{EvidenceId, EvidenceMeta};
use twinvault_core::ledger;
use twinvault_core::stats::Pooling;
use twinvault_service::http::guess_media_type;
use twinvault_service::{router, ServiceConfig};

/// Exit status for a verification that ran and found a mismatch.
const EXIT_FAIL_VERDICT: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "twinvault",
    version,
    about = "Evidence storage, retrieval and integrity verification"
)]
struct Cli {
    /// JSON service configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Data directory used when no configuration file is given.
    #[arg(
        long,
        global = true,
        value_name = "DIR",
        default_value = "twinvault-data"
    )]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Store a file on one backend and print the receipt.
    Store {
        #[arg(long)]
        backend: BackendKind,
        #[arg(long)]
        file: PathBuf,
        #[arg(long = "case")]
        case_id: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, default_value = "")]
        submitter: String,
        /// Defaults to a guess from the file extension.
        #[arg(long)]
        media_type: Option<String>,
    },
    /// Retrieve a payload into a file.
    Get {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the MD5 of stored evidence and compare it with the
    /// registered value. Exits 3 on a Fail verdict.
    Verify {
        #[command(flatten)]
        target: Target,
    },
    /// Ledger maintenance.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Run the storage benchmark and write report.json and records.csv.
    Bench(BenchArgs),
    /// Run the HTTP service.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
}

#[derive(Debug, Args)]
struct Target {
    /// Looked up on both backends when omitted.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long, required_unless_present = "block")]
    id: Option<EvidenceId>,
    /// Ledger block number.
    #[arg(long)]
    block: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum LedgerAction {
    /// Re-check every block of the persisted log.
    Validate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Unit {
    Mb,
    Bytes,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 5, 10, 20])]
    sizes: Vec<u64>,
    #[arg(long, value_enum, default_value = "mb")]
    unit: Unit,
    #[arg(long, default_value_t = 3)]
    reps: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Report directory; defaults to the configured report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulated network path as `base_seconds,bytes_per_second`.
    #[arg(long, value_parser = parse_latency)]
    latency: Option<LatencyModel>,
    #[arg(long, default_value = "corrected")]
    pooled: Pooling,
    /// Comma-separated subset of backends.
    #[arg(long, value_delimiter = ',')]
    backends: Vec<BackendKind>,
}

fn parse_latency(s: &str) -> Result<LatencyModel, String> {
    let (base, bw) = s
        .split_once(',')
        .ok_or("expected BASE_SECONDS,BYTES_PER_SECOND")?;
    let base: f64 = base.trim().parse().map_err(|e| format!("base: {e}"))?;
    let bw: f64 = bw.trim().parse().map_err(|e| format!("bandwidth: {e}"))?;
    if !(base >= 0.0 && base.is_finite()) || !(bw > 0.0 && bw.is_finite()) {
        return Err("base must be >= 0 and bandwidth > 0".into());
    }
    Ok(LatencyModel::new(base, bw))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ServiceConfig> {
    match &cli.config {
        Some(path) => ServiceConfig::load(path),
        None => Ok(ServiceConfig::in_dir(&cli.data_dir)),
    }
}

fn open_backend(config: &ServiceConfig) -> anyhow::Result<EvidenceBackend> {
    Ok(EvidenceBackend::open(
        &config.backend_config(),
        &BackendKind::ALL,
    )?)
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Store {
            backend,
            file,
            case_id,
            description,
            submitter,
            media_type,
        } => {
            let payload = fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let filename = file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "upload.bin".into());
            let media_type = media_type.unwrap_or_else(|| guess_media_type(&filename));
            let meta =
                EvidenceMeta::for_payload(&payload, case_id, filename, media_type, submitter)
                    .with_description(description);
            let receipt = open_backend(&config)?.post_evidence(backend, &payload, meta)?;
            print_json(&receipt)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Get { target, out } => {
            let backend = open_backend(&config)?;
            let locator = target.locator(&backend)?;
            let retrieval = backend.get_evidence(&locator)?;
            fs::write(&out, &retrieval.payload)
                .with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({
                "evidence_id": retrieval.evidence_id,
                "md5": retrieval.registered_md5,
                "size_bytes": retrieval.payload.len(),
                "seconds": retrieval.timing.seconds,
                "out": out,
            }))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { target } => {
            let backend = open_backend(&config)?;
            let locator = target.locator(&backend)?;
            let result = backend.verify_evidence(&locator)?;
            print_json(&result)?;
            if result.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("verdict: Fail ({} != {})", result.actual, result.expected);
                Ok(ExitCode::from(EXIT_FAIL_VERDICT))
            }
        }
        Command::Ledger {
            action: LedgerAction::Validate,
        } => {
            let report = ledger::validate_log(&config.ledger_log)
                .with_context(|| format!("reading {}", config.ledger_log.display()))?;
            print_json(&report)?;
            if report.valid {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("ledger invalid: {report}");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Bench(args) => run_bench(&config, args),
        Command::Serve { listen } => {
            let addr = listen.unwrap_or(config.listen);
            let backend = Arc::new(open_backend(&config)?);
            serve(addr, router(backend, config.ui_dir.clone()))
        }
    }
}

impl Target {
    fn locator(&self, backend: &EvidenceBackend) -> anyhow::Result<Locator> {
        Ok(match (self.backend, self.block, &self.id) {
            (Some(BackendKind::Relational), Some(_), _) => {
                bail!("--block applies to the ledger backend only")
            }
            (Some(BackendKind::LedgerCas) | None, Some(n), id) => Locator {
                kind: BackendKind::LedgerCas,
                block_number: Some(n),
                evidence_id: id.clone(),
            },
            (Some(kind), None, Some(id)) => Locator::by_id(kind, id.clone()),
            (None, None, Some(id)) => backend
                .locate(id)
                .with_context(|| format!("evidence {id} not found on any backend"))?,
            (_, None, None) => bail!("either --id or --block is required"),
        })
    }
}

fn run_bench(config: &ServiceConfig, args: BenchArgs) -> anyhow::Result<ExitCode> {
    let scale = match args.unit {
        Unit::Mb => MB,
        Unit::Bytes => 1,
    };
    let mut spec = WorkloadSpec::desk_scale();
    spec.sizes_bytes = args
        .sizes
        .iter()
        .map(|s| s.checked_mul(scale).context("size overflows"))
        .collect::<anyhow::Result<_>>()?;
    spec.repetitions = args.reps;
    spec.seed = args.seed;
    spec.latency = args.latency.unwrap_or_else(LatencyModel::disabled);
    if !args.backends.is_empty() {
        spec.backends = args.backends.into_iter().collect();
    }
    spec.validate()?;

    let out = args.out.unwrap_or_else(|| config.report_dir.clone());
    let scratch = tempfile::tempdir_in(existing_parent(&out)?)
        .context("creating benchmark work directory")?;
    let records = bench::run_benchmark_in(&spec, scratch.path())?;
    let (report, files) = bench::emit_report(&spec, &records, args.pooled, &out)?;
    print_json(&json!({
        "records": report.records.len(),
        "descriptives": report.descriptives,
        "effect_sizes": report.effect_sizes,
        "pct_differences": report.pct_differences,
        "report_json": files.json,
        "records_csv": files.csv,
    }))?;
    Ok(ExitCode::SUCCESS)
}

/// Creates `dir` and returns it, so scratch space lands on the same volume
/// as the report.
fn existing_parent(dir: &Path) -> anyhow::Result<&Path> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn serve(addr: std::net::SocketAddr, app: axum::Router) -> anyhow::Result<ExitCode> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(ExitCode::SUCCESS)
    })
}
