//! JSON route handlers. Every session mutation happens under the one state
//! lock, and the lock is never held across an await or a network call.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use harp_core::labels::serialize_labels;
use harp_core::media::{
    encode_wav, extract_notes, render_midi_preview, waveform_minmax, Media, MediaKind, SampleFormat,
    MAX_UPLOAD_BYTES,
};
use harp_core::protocol::{
    validate_control_values, CancelToken, ControlValues, EndpointAddress, HarpClient, JobState, JobStatus,
    ProcessOptions, CARD_TIMEOUT,
};
use harp_core::session::Session;
use harp_core::{ErrorCode, HarpError};

use crate::registry::RegistryEntry;

pub const PREVIEW_SAMPLE_RATE: u32 = 44100;
const DEFAULT_BINS: usize = 800;
const MAX_BINS: usize = 100_000;

pub(crate) struct AppState {
    inner: Mutex<Inner>,
    registry: Vec<RegistryEntry>,
    request_timeout: Duration,
    process_timeout: Duration,
}

struct Inner {
    session: Session,
    active: Option<CancelToken>,
    progress: Option<JobStatus>,
    /// Set instead of `progress` when the last job ended in an error.
    failure: Option<(&'static str, String)>,
}

impl AppState {
    pub(crate) fn new(registry: Vec<RegistryEntry>, request_timeout: Duration, process_timeout: Duration) -> Self {
        AppState {
            inner: Mutex::new(Inner {
                session: Session::new(),
                active: None,
                progress: None,
                failure: None,
            }),
            registry,
            request_timeout,
            process_timeout,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panic while holding the lock cannot leave the session half
        // mutated, so a poisoned lock is still usable
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

type Shared = Arc<AppState>;

fn error_body(status: StatusCode, code: &str, message: &str) -> Response {
    (status, Json(json!({"code": code, "message": message}))).into_response()
}

fn harp_error(status: StatusCode, err: &HarpError) -> Response {
    error_body(status, err.code.as_str(), &err.user_message)
}

fn busy() -> Response {
    error_body(StatusCode::CONFLICT, "busy", "a job is already running")
}

fn state_document(inner: &Inner, registry: &[RegistryEntry]) -> Value {
    let session = &inner.session;
    let doc = session.current();
    json!({
        "media_kind": doc.media_kind().map(MediaKind::as_str),
        "source_name": doc.source_name,
        "duration_s": doc.media.as_ref().map(Media::duration_s),
        "can_undo": session.can_undo(),
        "can_redo": session.can_redo(),
        "endpoint": session.endpoint().map(|b| json!({
            "url": b.address.as_str(),
            "card": b.card.to_document(),
        })),
        "registry": registry,
        "status": session.status_line(),
        "info": session.info_line(),
        "labels": serialize_labels(&doc.labels),
    })
}

fn state_response(inner: &Inner, registry: &[RegistryEntry]) -> Response {
    Json(state_document(inner, registry)).into_response()
}

async fn get_state(State(app): State<Shared>) -> Response {
    state_response(&app.lock(), &app.registry)
}

async fn load(State(app): State<Shared>, mut multipart: Multipart) -> Response {
    let mut file = None;
    loop {
        match multipart.next_field().await {
            Ok(Some(field)) if field.name() == Some("file") => {
                let name = field.file_name().unwrap_or("upload").to_string();
                match field.bytes().await {
                    Ok(bytes) => file = Some((name, bytes)),
                    Err(e) => return error_body(StatusCode::BAD_REQUEST, "bad_request", &e.body_text()),
                }
            }
            Ok(Some(_)) => {}
            Ok(None) => break,
            Err(e) => return error_body(StatusCode::BAD_REQUEST, "bad_request", &e.body_text()),
        }
    }
    let Some((name, bytes)) = file else {
        return error_body(StatusCode::BAD_REQUEST, "bad_request", "missing multipart part `file`");
    };

    let mut inner = app.lock();
    if inner.active.is_some() {
        return busy();
    }
    match inner.session.load_media(&bytes, &name) {
        Ok(()) => state_response(&inner, &app.registry),
        Err(err) => {
            let response = harp_error(StatusCode::UNPROCESSABLE_ENTITY, &err);
            inner.session.report_error(err);
            response
        }
    }
}

#[derive(Deserialize)]
struct EndpointRequest {
    url: String,
}

async fn set_endpoint(State(app): State<Shared>, Json(request): Json<EndpointRequest>) -> Response {
    let address = match EndpointAddress::parse(&request.url) {
        Ok(a) => a,
        Err(err) => {
            let response = harp_error(StatusCode::UNPROCESSABLE_ENTITY, &err);
            app.lock().session.report_error(err);
            return response;
        }
    };
    if app.lock().active.is_some() {
        return busy();
    }

    let timeout = app.request_timeout;
    let fetch_address = address.clone();
    let fetched = tokio::task::spawn_blocking(move || {
        HarpClient::with_request_timeout(timeout).fetch_card(&fetch_address, CARD_TIMEOUT)
    })
    .await;
    let fetched = match fetched {
        Ok(result) => result,
        Err(e) => Err(HarpError::connection(format!("card fetch task failed: {e}"))),
    };

    let mut inner = app.lock();
    match fetched {
        Ok(card) => {
            if inner.active.is_some() {
                return busy();
            }
            let body = card.to_document();
            inner.session.attach_endpoint(address, card);
            Json(body).into_response()
        }
        Err(err) => {
            let response = harp_error(StatusCode::BAD_GATEWAY, &err);
            inner.session.report_error(err);
            response
        }
    }
}

#[derive(Deserialize)]
struct ProcessRequest {
    #[serde(default)]
    controls: ControlValues,
}

async fn process(State(app): State<Shared>, Json(request): Json<ProcessRequest>) -> Response {
    let mut inner = app.lock();
    if inner.active.is_some() {
        return busy();
    }
    let doc = inner.session.current();
    let Some(media) = doc.media.as_ref() else {
        return error_body(StatusCode::CONFLICT, ErrorCode::E120_MediaTypeMismatch.as_str(), "no media loaded");
    };
    let Some(binding) = inner.session.endpoint() else {
        return error_body(StatusCode::CONFLICT, ErrorCode::E110_InvalidCard.as_str(), "no endpoint selected");
    };
    if media.kind() != binding.card.media_in {
        let message = format!(
            "{} expects {} input but the loaded file is {}",
            binding.card.name,
            binding.card.media_in,
            media.kind()
        );
        return error_body(StatusCode::CONFLICT, ErrorCode::E120_MediaTypeMismatch.as_str(), &message);
    }
    if let Err(err) = validate_control_values(&binding.card, &request.controls) {
        let response = harp_error(StatusCode::UNPROCESSABLE_ENTITY, &err);
        inner.session.report_error(err);
        return response;
    }
    let encoded = match media.encode() {
        Ok(bytes) => bytes,
        Err(err) => {
            let response = harp_error(StatusCode::UNPROCESSABLE_ENTITY, &err);
            inner.session.report_error(err);
            return response;
        }
    };
    let kind = media.kind();
    let address = binding.address.clone();

    let token = CancelToken::new();
    inner.active = Some(token.clone());
    inner.progress = Some(JobStatus::new(JobState::Queued, 0.0, "submitting"));
    inner.failure = None;
    inner.session.set_status("Processing...");
    drop(inner);

    let worker_app = app.clone();
    let options = ProcessOptions {
        timeout: app.process_timeout,
        cancel: Some(token),
    };
    let spawned = std::thread::Builder::new()
        .name("harp-gateway-job".to_string())
        .spawn(move || run_job(worker_app, address, encoded, kind, request.controls, options));
    if let Err(e) = spawned {
        let mut inner = app.lock();
        inner.active = None;
        let err = HarpError::connection(format!("could not start job thread: {e}"));
        inner.failure = Some(("error", format!("{}: {}", err.code, err.user_message)));
        inner.session.report_error(err);
        return error_body(StatusCode::INTERNAL_SERVER_ERROR, "internal", "could not start job");
    }
    (StatusCode::ACCEPTED, Json(json!({"state": "queued"}))).into_response()
}

fn run_job(
    app: Shared,
    address: EndpointAddress,
    media: Vec<u8>,
    kind: MediaKind,
    controls: ControlValues,
    options: ProcessOptions,
) {
    let client = HarpClient::with_request_timeout(app.request_timeout);
    let outcome = client.process_with(&address, &media, kind, &controls, &options, |status| {
        app.lock().progress = Some(status.clone());
    });
    let mut inner = app.lock();
    let applied = outcome.and_then(|result| inner.session.apply_result(&result));
    match applied {
        Ok(()) => {
            inner.progress = Some(JobStatus::new(JobState::Complete, 1.0, "done"));
            inner.failure = None;
        }
        Err(err) => {
            let state = if err.code == ErrorCode::E142_Cancelled {
                "cancelled"
            } else {
                "error"
            };
            log::warn!("job failed: {} ({})", err, err.developer_message);
            inner.failure = Some((state, format!("{}: {}", err.code, err.user_message)));
            inner.session.report_error(err);
        }
    }
    inner.active = None;
}

async fn progress(State(app): State<Shared>) -> Response {
    let inner = app.lock();
    let body = match (&inner.failure, &inner.progress) {
        (Some((state, message)), _) if inner.active.is_none() => {
            let last = inner.progress.as_ref().map_or(0.0, |p| p.progress);
            json!({"state": state, "progress": last, "message": message})
        }
        (_, Some(status)) => json!({
            "state": status.state.as_str(),
            "progress": status.progress,
            "message": status.message,
        }),
        _ => json!({"state": "idle", "progress": 0.0, "message": ""}),
    };
    Json(body).into_response()
}

async fn cancel(State(app): State<Shared>) -> Response {
    let mut inner = app.lock();
    if let Some(token) = &inner.active {
        token.cancel();
        inner.session.set_status("Cancelling...");
    }
    state_response(&inner, &app.registry)
}

async fn undo(State(app): State<Shared>) -> Response {
    let mut inner = app.lock();
    if inner.active.is_some() {
        return busy();
    }
    inner.session.undo();
    state_response(&inner, &app.registry)
}

async fn redo(State(app): State<Shared>) -> Response {
    let mut inner = app.lock();
    if inner.active.is_some() {
        return busy();
    }
    inner.session.redo();
    state_response(&inner, &app.registry)
}

/// Snapshot of the current media, taken under the lock.
fn current_media(app: &AppState) -> Result<Media, Response> {
    app.lock()
        .session
        .current()
        .media
        .clone()
        .ok_or_else(|| error_body(StatusCode::CONFLICT, ErrorCode::E120_MediaTypeMismatch.as_str(), "no media loaded"))
}

fn bytes_response(content_type: &'static str, bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, content_type)], bytes).into_response()
}

async fn media(State(app): State<Shared>) -> Response {
    let media = match current_media(&app) {
        Ok(m) => m,
        Err(response) => return response,
    };
    match media.encode() {
        Ok(bytes) => bytes_response(media.kind().content_type(), bytes),
        Err(err) => harp_error(StatusCode::INTERNAL_SERVER_ERROR, &err),
    }
}

fn wrong_kind(expected: MediaKind) -> Response {
    error_body(
        StatusCode::CONFLICT,
        ErrorCode::E120_MediaTypeMismatch.as_str(),
        &format!("this view needs {expected} media"),
    )
}

#[derive(Deserialize)]
struct WaveformQuery {
    bins: Option<usize>,
}

async fn waveform(State(app): State<Shared>, Query(query): Query<WaveformQuery>) -> Response {
    let buffer = match current_media(&app) {
        Ok(Media::Audio(buffer)) => buffer,
        Ok(Media::Midi(_)) => return wrong_kind(MediaKind::Audio),
        Err(response) => return response,
    };
    let bins = query.bins.unwrap_or(DEFAULT_BINS).clamp(1, MAX_BINS);
    let summary = waveform_minmax(&buffer, bins);
    let pairs: Vec<[f32; 2]> = summary.bins.iter().map(|&(lo, hi)| [lo, hi]).collect();
    Json(json!({
        "bins": pairs,
        "sample_rate": buffer.sample_rate,
        "duration_s": buffer.duration_s(),
    }))
    .into_response()
}

async fn notes(State(app): State<Shared>) -> Response {
    match current_media(&app) {
        Ok(Media::Midi(seq)) => Json(json!({"notes": extract_notes(&seq)})).into_response(),
        Ok(Media::Audio(_)) => wrong_kind(MediaKind::Midi),
        Err(response) => response,
    }
}

async fn preview(State(app): State<Shared>) -> Response {
    let seq = match current_media(&app) {
        Ok(Media::Midi(seq)) => seq,
        Ok(Media::Audio(_)) => return wrong_kind(MediaKind::Midi),
        Err(response) => return response,
    };
    let rendered = render_midi_preview(&seq, PREVIEW_SAMPLE_RATE);
    match encode_wav(&rendered, SampleFormat::Int16) {
        Ok(bytes) => bytes_response(MediaKind::Audio.content_type(), bytes),
        // an empty sequence renders to nothing
        Err(err) => harp_error(StatusCode::CONFLICT, &err),
    }
}

async fn debug(State(app): State<Shared>) -> Response {
    let inner = app.lock();
    let session = &inner.session;
    Json(json!({
        "undo_depth": session.undo_depth(),
        "redo_depth": session.redo_depth(),
        "busy": inner.active.is_some(),
        "content_hash": session.current().content_hash(),
        "last_error": session.last_error().map(|e| json!({
            "code": e.code.as_str(),
            "user_message": e.user_message,
            "developer_message": e.developer_message,
        })),
    }))
    .into_response()
}

const PLACEHOLDER_PAGE: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>HARP gateway</title></head>
<body>
<h1>HARP gateway</h1>
<p>No UI assets configured. Start with <code>--ui &lt;dir&gt;</code> to serve the web UI, or use the JSON API under <code>/api</code>.</p>
</body></html>
";

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER_PAGE)
}

async fn not_found(_body: Bytes) -> Response {
    error_body(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub(crate) fn api_router(app: Shared) -> Router {
    Router::new()
        .route("/api/state", get(get_state))
        .route("/api/load", post(load))
        .route("/api/endpoint", post(set_endpoint))
        .route("/api/process", post(process))
        .route("/api/progress", get(progress))
        .route("/api/cancel", post(cancel))
        .route("/api/undo", post(undo))
        .route("/api/redo", post(redo))
        .route("/api/media", get(media))
        .route("/api/waveform", get(waveform))
        .route("/api/notes", get(notes))
        .route("/api/preview", get(preview))
        .route("/api/debug", get(debug))
        .route("/api/*rest", axum::routing::any(not_found))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES + 64 * 1024))
        .with_state(app)
}

pub(crate) fn with_placeholder(router: Router) -> Router {
    router.route("/", get(placeholder))
}
