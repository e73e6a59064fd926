use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};

use harp_core::labels::{serialize_labels, LabelSet};
use harp_core::media::{
    decode_wav_with_format, detect_media_kind, encode_wav, parse_midi, serialize_midi, AudioBuffer,
    MediaKind, MidiSequence, SampleFormat, MAX_UPLOAD_BYTES,
};
use harp_core::protocol::{
    validate_control_values, ControlValues, EndpointAddress, JobState, JobStatus, ModelCard,
};
use harp_core::{ErrorCode, HarpError};

use crate::behavior::{behavior_gain, behavior_onsets, behavior_transpose, BehaviorKind, MockBehavior};

const PROGRESS_STEPS: u32 = 4;

enum Input {
    Audio(AudioBuffer, SampleFormat),
    Midi(MidiSequence),
}

struct Output {
    media: Option<(MediaKind, Vec<u8>)>,
    labels: LabelSet,
}

struct Job {
    status: JobStatus,
    input: Option<(Input, ControlValues)>,
    output: Option<Output>,
}

struct Shared {
    behavior: MockBehavior,
    card: ModelCard,
    jobs: Mutex<HashMap<String, Job>>,
    next_id: AtomicU64,
    queue: mpsc::UnboundedSender<String>,
}

impl Shared {
    fn status(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().unwrap().get(id).map(|j| j.status.clone())
    }

    /// Moves a job to `next` unless it already reached a terminal state.
    fn advance(&self, id: &str, next: JobStatus) -> bool {
        let mut jobs = self.jobs.lock().unwrap();
        match jobs.get_mut(id) {
            Some(job) if !job.status.state.is_terminal() => {
                job.status = next;
                true
            }
            _ => false,
        }
    }
}

fn error_reply(status: StatusCode, err: &HarpError) -> Response {
    let body = json!({"error": {"code": err.code.as_str(), "message": err.user_message}});
    (status, Json(body)).into_response()
}

fn not_found(id: &str) -> Response {
    error_reply(
        StatusCode::NOT_FOUND,
        &HarpError::new(ErrorCode::E141_JobNotFound, format!("unknown job {id}"), ""),
    )
}

async fn card(State(shared): State<Arc<Shared>>) -> Json<Value> {
    Json(shared.card.to_document())
}

async fn submit(State(shared): State<Arc<Shared>>, mut form: Multipart) -> Response {
    let mut media: Option<(String, Vec<u8>)> = None;
    let mut controls: Option<String> = None;
    loop {
        let field = match form.next_field().await {
            Ok(Some(field)) => field,
            Ok(None) => break,
            Err(e) => {
                return error_reply(StatusCode::BAD_REQUEST, &HarpError::decode(format!("multipart: {e}")))
            }
        };
        let name = field.name().unwrap_or_default().to_string();
        let filename = field.file_name().unwrap_or_default().to_string();
        let bytes = match field.bytes().await {
            Ok(b) => b.to_vec(),
            Err(e) => {
                return error_reply(StatusCode::BAD_REQUEST, &HarpError::decode(format!("multipart: {e}")))
            }
        };
        match name.as_str() {
            "media" => media = Some((filename, bytes)),
            "controls" => controls = Some(String::from_utf8_lossy(&bytes).into_owned()),
            _ => {}
        }
    }

    let Some((filename, bytes)) = media else {
        return error_reply(StatusCode::BAD_REQUEST, &HarpError::decode("missing media part"));
    };
    let given: ControlValues = match controls.as_deref().map(serde_json::from_str).transpose() {
        Ok(v) => v.unwrap_or_default(),
        Err(e) => {
            return error_reply(
                StatusCode::BAD_REQUEST,
                &HarpError::new(ErrorCode::E130_ControlValidation, "controls are not a JSON object", e.to_string()),
            )
        }
    };
    let values = match validate_control_values(&shared.card, &given) {
        Ok(v) => v,
        Err(e) => return error_reply(StatusCode::BAD_REQUEST, &e),
    };

    let expected = shared.card.media_in;
    if detect_media_kind(&bytes, &filename).is_some_and(|k| k != expected) {
        let err = HarpError::new(
            ErrorCode::E120_MediaTypeMismatch,
            format!("this endpoint expects {expected} input"),
            "",
        );
        return error_reply(StatusCode::BAD_REQUEST, &err);
    }
    let input = match expected {
        MediaKind::Audio => decode_wav_with_format(&bytes).map(|(b, f)| Input::Audio(b, f)),
        MediaKind::Midi => parse_midi(&bytes).map(Input::Midi),
    };
    let input = match input {
        Ok(i) => i,
        Err(e) => return error_reply(StatusCode::BAD_REQUEST, &e),
    };

    let id = format!("job-{}", shared.next_id.fetch_add(1, Ordering::SeqCst) + 1);
    shared.jobs.lock().unwrap().insert(
        id.clone(),
        Job {
            status: JobStatus::new(JobState::Queued, 0.0, "queued"),
            input: Some((input, values)),
            output: None,
        },
    );
    if shared.queue.send(id.clone()).is_err() {
        shared.advance(&id, JobStatus::new(JobState::Error, 0.0, "worker stopped"));
    }
    (StatusCode::ACCEPTED, Json(json!({"job_id": id}))).into_response()
}

async fn status(State(shared): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    match shared.status(&id) {
        Some(status) => Json(status).into_response(),
        None => not_found(&id),
    }
}

async fn cancel(State(shared): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    shared.advance(&id, JobStatus::new(JobState::Cancelled, 0.0, "cancelled by client"));
    match shared.status(&id) {
        Some(status) => Json(status).into_response(),
        None => not_found(&id),
    }
}

async fn result(State(shared): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    let jobs = shared.jobs.lock().unwrap();
    let Some(job) = jobs.get(&id) else {
        return not_found(&id);
    };
    let Some(output) = job.output.as_ref().filter(|_| job.status.state == JobState::Complete) else {
        let err = HarpError::remote(format!("job {id} is {}", job.status.state.as_str()), "");
        return error_reply(StatusCode::CONFLICT, &err);
    };
    let (route, kind) = match &output.media {
        Some((kind, _)) => (Some(format!("/harp/jobs/{id}/media")), Some(kind.as_str())),
        None => (None, None),
    };
    Json(json!({
        "media_route": route,
        "media_kind": kind,
        "labels": serialize_labels(&output.labels),
    }))
    .into_response()
}

async fn media(State(shared): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    let jobs = shared.jobs.lock().unwrap();
    match jobs.get(&id).and_then(|j| j.output.as_ref()).and_then(|o| o.media.as_ref()) {
        Some((kind, bytes)) => {
            ([(header::CONTENT_TYPE, kind.content_type())], bytes.clone()).into_response()
        }
        None => not_found(&id),
    }
}

fn run_behavior(kind: BehaviorKind, input: Input, values: &ControlValues) -> Result<Output, HarpError> {
    let amount = values
        .get(kind.control_label())
        .and_then(|v| v.as_f64())
        .unwrap_or_default();
    Ok(match (kind, input) {
        (BehaviorKind::Gain, Input::Audio(buffer, format)) => Output {
            media: Some((MediaKind::Audio, encode_wav(&behavior_gain(&buffer, amount), format)?)),
            labels: LabelSet::new(),
        },
        (BehaviorKind::Transpose, Input::Midi(seq)) => Output {
            media: Some((
                MediaKind::Midi,
                serialize_midi(&behavior_transpose(&seq, amount.round() as i32))?,
            )),
            labels: LabelSet::new(),
        },
        (BehaviorKind::Onsets, Input::Audio(buffer, _)) => Output {
            media: None,
            labels: behavior_onsets(&buffer, amount),
        },
        _ => return Err(HarpError::decode("input does not match behavior")),
    })
}

/// Runs queued jobs one at a time, in submission order.
async fn worker(shared: Arc<Shared>, mut queue: mpsc::UnboundedReceiver<String>) {
    while let Some(id) = queue.recv().await {
        let input = {
            let mut jobs = shared.jobs.lock().unwrap();
            match jobs.get_mut(&id) {
                Some(job) if job.status.state == JobState::Queued => {
                    job.status = JobStatus::new(JobState::Running, 0.0, "running");
                    job.input.take()
                }
                _ => None,
            }
        };
        let Some((input, values)) = input else {
            continue;
        };

        let delay = shared.behavior.artificial_delay;
        if !delay.is_zero() {
            let step = delay / PROGRESS_STEPS;
            for i in 1..=PROGRESS_STEPS {
                tokio::time::sleep(step).await;
                if shared.status(&id).is_none_or(|s| s.state.is_terminal()) {
                    break;
                }
                if i < PROGRESS_STEPS {
                    let progress = i as f64 / PROGRESS_STEPS as f64;
                    shared.advance(&id, JobStatus::new(JobState::Running, progress, "running"));
                }
            }
        }

        let outcome = run_behavior(shared.behavior.kind, input, &values);
        let mut jobs = shared.jobs.lock().unwrap();
        if let Some(job) = jobs.get_mut(&id).filter(|j| !j.status.state.is_terminal()) {
            match outcome {
                Ok(output) => {
                    job.output = Some(output);
                    job.status = JobStatus::new(JobState::Complete, 1.0, "done");
                }
                Err(e) => job.status = JobStatus::new(JobState::Error, 0.0, e.user_message),
            }
        }
    }
}

/// A running mock endpoint. Dropping it shuts the server down.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn endpoint(&self) -> EndpointAddress {
        EndpointAddress::parse(&self.url()).expect("loopback url is valid")
    }

    /// Stops accepting requests and waits for the server thread to exit.
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the server exits on its own.
    pub fn wait(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn router(behavior: MockBehavior) -> (Router, impl std::future::Future<Output = ()>) {
    let (tx, rx) = mpsc::unbounded_channel();
    let shared = Arc::new(Shared {
        behavior,
        card: behavior.kind.card(),
        jobs: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(0),
        queue: tx,
    });
    let app = Router::new()
        .route("/harp/card", get(card))
        .route("/harp/process", post(submit))
        .route("/harp/jobs/:id", get(status))
        .route("/harp/jobs/:id/result", get(result))
        .route("/harp/jobs/:id/media", get(media))
        .route("/harp/jobs/:id/cancel", post(cancel))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES + 64 * 1024))
        .with_state(shared.clone());
    (app, worker(shared, rx))
}

/// Starts a mock endpoint on `127.0.0.1:port` (0 picks a free port) on its
/// own thread.
pub fn run_mock_endpoint(behavior: MockBehavior, port: u16) -> io::Result<MockServer> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();

    let thread = std::thread::Builder::new()
        .name(format!("harp-mock-{}", behavior.kind))
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("mock endpoint: {e}");
                        return;
                    }
                };
                let (app, worker) = router(behavior);
                let worker = tokio::spawn(worker);
                let served = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await;
                if let Err(e) = served {
                    log::error!("mock endpoint: {e}");
                }
                worker.abort();
            });
        })?;

    Ok(MockServer {
        addr,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}
