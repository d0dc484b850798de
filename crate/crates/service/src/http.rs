//! HTTP routes over the unified evidence backend.
//!
//! | route                                   | result                          |
//! |-----------------------------------------|---------------------------------|
//! | `POST /api/evidence` (multipart)        | 201 + store receipt             |
//! | `GET /api/evidence?case_id=`            | merged listing, no payloads     |
//! | `GET /api/evidence/{id}?backend=&block=`| payload bytes, `X-MD5`, timing  |
//! | `GET /api/evidence/{id}/verify?backend=`| verification verdict            |
//!
//! Backend calls block, so each handler hands them to the blocking pool.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use bytes::Bytes;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;
use twinvault_core::backend::{BackendError, BackendKind, EvidenceBackend, Locator};
use twinvault_core::evidence::{EvidenceId, EvidenceMeta};

/// Size of the frames a payload response is split into.
const RESPONSE_FRAME: usize = 64 * 1024;
/// Allowance for multipart framing and the text fields on top of the cap.
const FORM_OVERHEAD: usize = 64 * 1024;

pub const HEADER_MD5: &str = "x-md5";
pub const HEADER_TIMING: &str = "x-timing-seconds";
pub const HEADER_EVIDENCE_ID: &str = "x-evidence-id";

#[derive(Clone)]
pub struct AppState {
    backend: Arc<EvidenceBackend>,
}

impl AppState {
    pub fn new(backend: Arc<EvidenceBackend>) -> Self {
        Self { backend }
    }
}

pub fn router(backend: Arc<EvidenceBackend>, ui_dir: Option<PathBuf>) -> Router {
    let cap = usize::try_from(backend.payload_cap()).unwrap_or(usize::MAX);
    let api = Router::new()
        .route(
            "/api/evidence",
            get(list_evidence)
                .post(post_evidence)
                .layer(DefaultBodyLimit::max(cap.saturating_add(FORM_OVERHEAD))),
        )
        .route("/api/evidence/{id}", get(get_evidence))
        .route("/api/evidence/{id}/verify", get(verify_evidence))
        .with_state(AppState::new(backend));
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(err: BackendError) -> Self {
        let message = err.to_string();
        match err {
            BackendError::NotFound(_) => Self::not_found(message),
            BackendError::NotConfigured(_)
            | BackendError::InvalidLocator(_)
            | BackendError::MetadataMismatch { .. } => Self::bad_request(message),
            BackendError::PayloadTooLarge { .. } => {
                Self::new(StatusCode::PAYLOAD_TOO_LARGE, message)
            }
            BackendError::DanglingRegistration {
                block_number,
                content_id,
            } => Self {
                status: StatusCode::CONFLICT,
                body: json!({
                    "error": message,
                    "kind": "dangling_registration",
                    "block_number": block_number,
                    "content_id": content_id,
                }),
            },
            BackendError::Integrity { locator, detail } => Self {
                status: StatusCode::CONFLICT,
                body: json!({
                    "error": message,
                    "kind": "integrity_violation",
                    "locator": locator,
                    "detail": detail,
                }),
            },
            BackendError::StoreFailed { .. } => Self::new(StatusCode::BAD_GATEWAY, message),
        }
    }
}

impl From<MultipartError> for ApiError {
    fn from(err: MultipartError) -> Self {
        Self::new(err.status(), err.body_text())
    }
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&EvidenceBackend) -> Result<T, BackendError> + Send + 'static,
{
    let backend = Arc::clone(&state.backend);
    tokio::task::spawn_blocking(move || f(&backend))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_backend(value: &str) -> Result<BackendKind, ApiError> {
    value
        .parse()
        .map_err(|e: twinvault_core::backend::UnknownBackend| ApiError::bad_request(e.to_string()))
}

struct Upload {
    payload: Bytes,
    filename: String,
    media_type: Option<String>,
}

async fn post_evidence(
    State(state): State<AppState>,
    mut form: Multipart,
) -> Result<Response, ApiError> {
    let cap = state.backend.payload_cap();
    let mut upload = None;
    let mut backend = None;
    let mut case_id = None;
    let mut description = String::new();
    let mut submitter = String::new();

    while let Some(field) = form.next_field().await? {
        match field.name().unwrap_or_default() {
            "file" => {
                let filename = field.file_name().unwrap_or("upload.bin").to_string();
                let media_type = field.content_type().map(str::to_string);
                let payload = field.bytes().await?;
                upload = Some(Upload {
                    payload,
                    filename,
                    media_type,
                });
            }
            "backend" => backend = Some(field.text().await?),
            "case_id" => case_id = Some(field.text().await?),
            "description" => description = field.text().await?,
            "submitter" => submitter = field.text().await?,
            _ => {}
        }
    }

    let kind = parse_backend(
        backend
            .as_deref()
            .ok_or_else(|| ApiError::bad_request("missing field `backend`"))?,
    )?;
    let upload = upload.ok_or_else(|| ApiError::bad_request("missing field `file`"))?;
    let case_id = case_id
        .filter(|c| !c.is_empty())
        .ok_or_else(|| ApiError::bad_request("missing field `case_id`"))?;
    if upload.payload.len() as u64 > cap {
        return Err(BackendError::PayloadTooLarge {
            size: upload.payload.len() as u64,
            cap,
        }
        .into());
    }

    let media_type = upload
        .media_type
        .filter(|m| !m.is_empty() && m != "application/octet-stream")
        .unwrap_or_else(|| guess_media_type(&upload.filename));
    let meta = EvidenceMeta::for_payload(
        &upload.payload,
        case_id,
        upload.filename,
        media_type,
        submitter,
    )
    .with_description(description);
    let payload = upload.payload;
    let receipt = blocking(&state, move |b| b.post_evidence(kind, &payload, meta)).await?;
    Ok((StatusCode::CREATED, Json(receipt)).into_response())
}

pub fn guess_media_type(filename: &str) -> String {
    mime_guess::from_path(filename)
        .first_or_octet_stream()
        .essence_str()
        .to_string()
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    case_id: Option<String>,
}

async fn list_evidence(
    State(state): State<AppState>,
    Query(q): Query<ListQuery>,
) -> Result<Response, ApiError> {
    let entries = blocking(&state, move |b| b.list_evidence(q.case_id.as_deref())).await?;
    Ok(Json(entries).into_response())
}

#[derive(Debug, Deserialize)]
struct LocatorQuery {
    backend: Option<String>,
    block: Option<u64>,
}

/// Builds the locator for a path id and optional query. Without a backend, a
/// block number implies the ledger; otherwise the id is looked up on both.
fn resolve_locator(
    backend: &EvidenceBackend,
    id: &str,
    q: &LocatorQuery,
) -> Result<Locator, ApiError> {
    let kind = q.backend.as_deref().map(parse_backend).transpose()?;
    let parsed: Option<EvidenceId> = id.parse().ok();
    let unknown = || ApiError::not_found(id);
    match (kind, q.block) {
        (Some(BackendKind::Relational), Some(_)) => Err(ApiError::bad_request(
            "`block` applies to the ledger backend only",
        )),
        (Some(BackendKind::LedgerCas) | None, Some(n)) => Ok(Locator {
            kind: BackendKind::LedgerCas,
            block_number: Some(n),
            evidence_id: parsed,
        }),
        (Some(kind), None) => Ok(Locator::by_id(kind, parsed.ok_or_else(unknown)?)),
        (None, None) => backend
            .locate(&parsed.ok_or_else(unknown)?)
            .ok_or_else(unknown),
    }
}

async fn get_evidence(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<LocatorQuery>,
) -> Result<Response, ApiError> {
    let retrieval = blocking(&state, move |b| {
        let locator = resolve_locator(b, &id, &q).map_err(ApiError::into_backend)?;
        b.get_evidence(&locator)
    })
    .await?;

    let media_type = HeaderValue::from_str(&retrieval.meta.media_type)
        .unwrap_or_else(|_| HeaderValue::from_static("application/octet-stream"));
    let disposition = format!(
        "inline; filename=\"{}\"",
        retrieval.meta.filename.replace(['"', '\\'], "_")
    );
    let headers = [
        (header::CONTENT_TYPE, media_type),
        (
            header::CONTENT_LENGTH,
            HeaderValue::from(retrieval.payload.len()),
        ),
        (
            header::CONTENT_DISPOSITION,
            HeaderValue::from_str(&disposition)
                .unwrap_or_else(|_| HeaderValue::from_static("inline")),
        ),
        (
            header::HeaderName::from_static(HEADER_MD5),
            HeaderValue::from_str(&retrieval.registered_md5.to_string()).expect("digest is ASCII"),
        ),
        (
            header::HeaderName::from_static(HEADER_TIMING),
            HeaderValue::from_str(&retrieval.timing.seconds.to_string()).expect("float is ASCII"),
        ),
        (
            header::HeaderName::from_static(HEADER_EVIDENCE_ID),
            HeaderValue::from_str(retrieval.evidence_id.as_str()).expect("id is hex"),
        ),
    ];
    Ok((headers, payload_body(retrieval.payload)).into_response())
}

/// Sends the payload as a sequence of frames sharing one allocation.
fn payload_body(payload: Vec<u8>) -> Body {
    let payload = Bytes::from(payload);
    let frames = (0..payload.len())
        .step_by(RESPONSE_FRAME)
        .map(move |start| {
            let end = (start + RESPONSE_FRAME).min(payload.len());
            Ok::<_, std::convert::Infallible>(payload.slice(start..end))
        })
        .collect::<Vec<_>>();
    Body::from_stream(futures_util::stream::iter(frames))
}

async fn verify_evidence(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<LocatorQuery>,
) -> Result<Response, ApiError> {
    let result = blocking(&state, move |b| {
        let locator = resolve_locator(b, &id, &q).map_err(ApiError::into_backend)?;
        b.verify_evidence(&locator)
    })
    .await?;
    Ok(Json(result).into_response())
}

impl ApiError {
    /// Carries a routing error through a backend closure; the status is
    /// restored by the `From<BackendError>` mapping.
    fn into_backend(self) -> BackendError {
        let message = self.body["error"].as_str().unwrap_or_default().to_string();
        if self.status == StatusCode::NOT_FOUND {
            BackendError::NotFound(message)
        } else {
            BackendError::InvalidLocator(message)
        }
    }
}
