//! Blocking HTTP client for the endpoint protocol.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::{multipart, Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::card::{parse_model_card, ModelCard};
use super::controls::{validate_control_values, ControlValues};
use crate::error::{ErrorCode, HarpError, Result};
use crate::labels::{parse_labels, LabelSet};
use crate::media::{ensure_decodable, MediaKind, MAX_UPLOAD_BYTES};

pub const CARD_TIMEOUT: Duration = Duration::from_secs(30);
pub const PROCESS_BUDGET: Duration = Duration::from_secs(600);
pub const POLL_INITIAL: Duration = Duration::from_millis(250);
pub const POLL_MAX: Duration = Duration::from_secs(2);
const POLL_BACKOFF: f64 = 1.5;

/// Base URL of an endpoint, without trailing slashes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EndpointAddress {
    base_url: String,
}

impl EndpointAddress {
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim().trim_end_matches('/');
        let invalid = |why: &str| {
            HarpError::new(
                ErrorCode::E100_ConnectionFailed,
                "The endpoint address is not a valid http(s) URL.",
                format!("endpoint {trimmed:?}: {why}"),
            )
        };
        let url = url::Url::parse(trimmed).map_err(|e| invalid(&e.to_string()))?;
        if url.scheme() != "http" && url.scheme() != "https" {
            return Err(invalid("scheme must be http or https"));
        }
        if url.host_str().is_none_or(str::is_empty) {
            return Err(invalid("missing host"));
        }
        Ok(EndpointAddress {
            base_url: trimmed.to_string(),
        })
    }

    pub fn as_str(&self) -> &str {
        &self.base_url
    }

    fn route(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }
}

impl fmt::Display for EndpointAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base_url)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JobHandle {
    pub endpoint: EndpointAddress,
    pub job_id: String,
}

impl JobHandle {
    fn route(&self, suffix: &str) -> String {
        self.endpoint
            .route(&format!("/harp/jobs/{}{suffix}", encode_path_segment(&self.job_id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Complete,
    Error,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Complete | JobState::Error | JobState::Cancelled)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Complete => "complete",
            JobState::Error => "error",
            JobState::Cancelled => "cancelled",
        }
    }

    /// Whether a job may move from `self` to `next`.
    pub fn can_become(self, next: JobState) -> bool {
        match self {
            JobState::Queued => true,
            JobState::Running => next != JobState::Queued,
            terminal => terminal == next,
        }
    }
}

/// Observable state of a remote job; also its wire document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    pub progress: f64,
    #[serde(default)]
    pub message: String,
}

impl JobStatus {
    pub fn new(state: JobState, progress: f64, message: impl Into<String>) -> Self {
        let progress = if state == JobState::Complete {
            1.0
        } else if progress.is_finite() {
            progress.clamp(0.0, 1.0)
        } else {
            0.0
        };
        JobStatus {
            state,
            progress,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaPayload {
    pub kind: MediaKind,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProcessResult {
    pub media: Option<MediaPayload>,
    pub labels: LabelSet,
}

/// Shared flag asking a running [`HarpClient::process_with`] to cancel its job.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct ProcessOptions {
    pub timeout: Duration,
    pub cancel: Option<CancelToken>,
}

impl Default for ProcessOptions {
    fn default() -> Self {
        ProcessOptions {
            timeout: PROCESS_BUDGET,
            cancel: None,
        }
    }
}

#[derive(Deserialize)]
struct SubmitReply {
    job_id: String,
}

#[derive(Deserialize)]
struct ResultDocument {
    media_route: Option<String>,
    media_kind: Option<MediaKind>,
    #[serde(default = "empty_array")]
    labels: Value,
}

fn empty_array() -> Value {
    Value::Array(Vec::new())
}

fn encode_path_segment(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for b in text.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn transport_error(route: &str, err: reqwest::Error) -> HarpError {
    if err.is_timeout() {
        HarpError::timeout(format!("{route}: {err}"))
    } else {
        HarpError::connection(format!("{route}: {err}"))
    }
}

/// Pulls `error.message` (and `error.code`) out of an error body if present.
fn server_message(body: &str) -> (Option<String>, String) {
    let parsed: Option<Value> = serde_json::from_str(body).ok();
    let error = parsed.as_ref().and_then(|v| v.get("error"));
    let code = error
        .and_then(|e| e.get("code"))
        .and_then(Value::as_str)
        .map(str::to_string);
    let message = error
        .and_then(|e| e.get("message"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| body.chars().take(200).collect());
    (code, message)
}

fn unexpected_status(route: &str, response: Response) -> HarpError {
    let status = response.status();
    let body = response.text().unwrap_or_default();
    let (code, message) = server_message(&body);
    let user = if message.is_empty() {
        format!("The endpoint failed with status {}.", status.as_u16())
    } else {
        format!("The endpoint reported: {message}")
    };
    HarpError::remote(
        user,
        format!(
            "{route}: HTTP {status}{}: {body}",
            code.map(|c| format!(" ({c})")).unwrap_or_default()
        ),
    )
}

fn job_not_found(route: &str) -> HarpError {
    HarpError::new(
        ErrorCode::E141_JobNotFound,
        "The endpoint does not know this job.",
        format!("{route}: HTTP 404"),
    )
}

fn parse_json<T: serde::de::DeserializeOwned>(route: &str, response: Response) -> Result<T> {
    let text = response.text().map_err(|e| transport_error(route, e))?;
    serde_json::from_str(&text).map_err(|e| {
        HarpError::remote(
            "The endpoint sent an unreadable reply.",
            format!("{route}: malformed JSON ({e}): {text}"),
        )
    })
}

/// Stateless protocol client. Cheap to clone; safe to share across threads.
#[derive(Debug, Clone)]
pub struct HarpClient {
    http: Client,
    request_timeout: Duration,
}

impl Default for HarpClient {
    fn default() -> Self {
        Self::new()
    }
}

impl HarpClient {
    pub fn new() -> Self {
        Self::with_request_timeout(CARD_TIMEOUT)
    }

    /// `request_timeout` bounds each individual request other than the
    /// card fetch, which takes its own timeout.
    pub fn with_request_timeout(request_timeout: Duration) -> Self {
        let http = Client::builder()
            .connect_timeout(request_timeout)
            .build()
            .expect("http client builds");
        HarpClient {
            http,
            request_timeout,
        }
    }

    pub fn fetch_card(&self, endpoint: &EndpointAddress, timeout: Duration) -> Result<ModelCard> {
        let route = endpoint.route("/harp/card");
        let response = self
            .http
            .get(&route)
            .timeout(timeout)
            .send()
            .map_err(|e| transport_error(&route, e))?;
        if response.status() != StatusCode::OK {
            let status = response.status();
            return Err(HarpError::invalid_card(format!("{route}: HTTP {status}")));
        }
        let text = response.text().map_err(|e| transport_error(&route, e))?;
        parse_model_card(&text).map_err(|mut e| {
            e.developer_message = format!("{route}: {}", e.developer_message);
            e
        })
    }

    pub fn submit_job(
        &self,
        endpoint: &EndpointAddress,
        card: &ModelCard,
        media: &[u8],
        media_kind: MediaKind,
        values: &ControlValues,
    ) -> Result<JobHandle> {
        self.submit_within(endpoint, card, media, media_kind, values, self.request_timeout)
    }

    fn submit_within(
        &self,
        endpoint: &EndpointAddress,
        card: &ModelCard,
        media: &[u8],
        media_kind: MediaKind,
        values: &ControlValues,
        timeout: Duration,
    ) -> Result<JobHandle> {
        if media_kind != card.media_in {
            return Err(HarpError::new(
                ErrorCode::E120_MediaTypeMismatch,
                format!("{} expects {} input, not {}.", card.name, card.media_in, media_kind),
                format!("media_kind {media_kind} != card.media_in {}", card.media_in),
            ));
        }
        if media.len() > MAX_UPLOAD_BYTES {
            return Err(HarpError::new(
                ErrorCode::E151_MediaEncode,
                "The file is too large to upload (limit 256 MiB).",
                format!("upload of {} bytes exceeds {MAX_UPLOAD_BYTES}", media.len()),
            ));
        }
        let route = endpoint.route("/harp/process");
        let file = multipart::Part::bytes(media.to_vec())
            .file_name(format!("input.{}", media_kind.file_extension()))
            .mime_str(media_kind.content_type())
            .expect("static mime type");
        let controls = serde_json::to_string(values).expect("control values serialize");
        let form = multipart::Form::new().part("media", file).text("controls", controls);

        let response = self
            .http
            .post(&route)
            .timeout(timeout)
            .multipart(form)
            .send()
            .map_err(|e| transport_error(&route, e))?;
        if response.status() != StatusCode::ACCEPTED {
            return Err(unexpected_status(&route, response));
        }
        let reply: SubmitReply = parse_json(&route, response)?;
        if reply.job_id.is_empty() {
            return Err(HarpError::remote(
                "The endpoint did not start a job.",
                format!("{route}: empty job_id"),
            ));
        }
        Ok(JobHandle {
            endpoint: endpoint.clone(),
            job_id: reply.job_id,
        })
    }

    pub fn poll_status(&self, handle: &JobHandle) -> Result<JobStatus> {
        self.poll_within(handle, self.request_timeout)
    }

    fn poll_within(&self, handle: &JobHandle, timeout: Duration) -> Result<JobStatus> {
        let route = handle.route("");
        let response = self
            .http
            .get(&route)
            .timeout(timeout)
            .send()
            .map_err(|e| transport_error(&route, e))?;
        self.status_reply(&route, response)
    }

    fn status_reply(&self, route: &str, response: Response) -> Result<JobStatus> {
        match response.status() {
            StatusCode::OK => {
                let doc: JobStatus = parse_json(route, response)?;
                Ok(JobStatus::new(doc.state, doc.progress, doc.message))
            }
            StatusCode::NOT_FOUND => Err(job_not_found(route)),
            _ => Err(unexpected_status(route, response)),
        }
    }

    pub fn fetch_result(&self, handle: &JobHandle) -> Result<ProcessResult> {
        self.fetch_result_within(handle, self.request_timeout)
    }

    fn fetch_result_within(&self, handle: &JobHandle, timeout: Duration) -> Result<ProcessResult> {
        let route = handle.route("/result");
        let response = self
            .http
            .get(&route)
            .timeout(timeout)
            .send()
            .map_err(|e| transport_error(&route, e))?;
        match response.status() {
            StatusCode::OK => {}
            StatusCode::NOT_FOUND => return Err(job_not_found(&route)),
            StatusCode::CONFLICT => {
                return Err(HarpError::remote(
                    "The job has not completed.",
                    format!("{route}: HTTP 409, job not complete"),
                ))
            }
            _ => return Err(unexpected_status(&route, response)),
        }
        let doc: ResultDocument = parse_json(&route, response)?;
        let labels = parse_labels(&doc.labels).map_err(|mut e| {
            e.developer_message = format!("{route}: {}", e.developer_message);
            e
        })?;

        let media = match (doc.media_route, doc.media_kind) {
            (None, _) => None,
            (Some(_), None) => {
                return Err(HarpError::remote(
                    "The endpoint sent media of an unknown type.",
                    format!("{route}: media_route without media_kind"),
                ))
            }
            (Some(path), Some(kind)) => {
                let media_route = handle.endpoint.route(&path);
                let response = self
                    .http
                    .get(&media_route)
                    .timeout(timeout)
                    .send()
                    .map_err(|e| transport_error(&media_route, e))?;
                if response.status() != StatusCode::OK {
                    return Err(unexpected_status(&media_route, response));
                }
                let bytes = response
                    .bytes()
                    .map_err(|e| transport_error(&media_route, e))?
                    .to_vec();
                ensure_decodable(kind, &bytes).map_err(|mut e| {
                    e.developer_message = format!("{media_route}: {}", e.developer_message);
                    e
                })?;
                Some(MediaPayload { kind, bytes })
            }
        };
        Ok(ProcessResult { media, labels })
    }

    pub fn cancel_job(&self, handle: &JobHandle) -> Result<JobStatus> {
        self.cancel_within(handle, self.request_timeout)
    }

    fn cancel_within(&self, handle: &JobHandle, timeout: Duration) -> Result<JobStatus> {
        let route = handle.route("/cancel");
        let response = self
            .http
            .post(&route)
            .timeout(timeout)
            .send()
            .map_err(|e| transport_error(&route, e))?;
        self.status_reply(&route, response)
    }

    /// Card fetch, validation, submission, polling and retrieval in one call.
    pub fn process<F>(
        &self,
        endpoint: &EndpointAddress,
        media: &[u8],
        media_kind: MediaKind,
        given: &ControlValues,
        timeout: Duration,
        on_progress: F,
    ) -> Result<ProcessResult>
    where
        F: FnMut(&JobStatus),
    {
        let options = ProcessOptions {
            timeout,
            cancel: None,
        };
        self.process_with(endpoint, media, media_kind, given, &options, on_progress)
    }

    /// Like [`process`](Self::process), with an optional cancel token.
    ///
    /// Polls at 250 ms, growing the interval by 1.5x per poll up to 2 s.
    /// `on_progress` sees each distinct status once, in order.
    pub fn process_with<F>(
        &self,
        endpoint: &EndpointAddress,
        media: &[u8],
        media_kind: MediaKind,
        given: &ControlValues,
        options: &ProcessOptions,
        mut on_progress: F,
    ) -> Result<ProcessResult>
    where
        F: FnMut(&JobStatus),
    {
        let deadline = Instant::now() + options.timeout;
        let budget = options.timeout;
        let remaining = || {
            deadline
                .checked_duration_since(Instant::now())
                .filter(|d| !d.is_zero())
                .ok_or_else(|| {
                    HarpError::timeout(format!("{endpoint}: processing budget of {budget:?} exceeded"))
                })
        };
        // a request timing out because the overall budget ran out is the
        // budget's timeout, not the request's
        let within = |limit: Duration| -> Result<Duration> { Ok(remaining()?.min(limit)) };

        let card = self.fetch_card(endpoint, within(CARD_TIMEOUT)?)?;
        let values = validate_control_values(&card, given)?;
        let handle =
            self.submit_within(endpoint, &card, media, media_kind, &values, within(self.request_timeout)?)?;

        let outcome = self.drive(&handle, options, &remaining, &within, &mut on_progress);
        if let Err(err) = &outcome {
            if err.code == ErrorCode::E101_Timeout {
                // best effort; the job may already be gone
                let _ = self.cancel_within(&handle, Duration::from_secs(2));
            }
        }
        outcome?;

        let result = self.fetch_result_within(&handle, within(self.request_timeout)?)?;
        let received = result.media.as_ref().map(|m| m.kind);
        if received != card.media_out.media() {
            return Err(HarpError::remote(
                "The endpoint returned a different kind of output than it declared.",
                format!(
                    "{}: card.media_out {} but result media {:?}",
                    handle.route("/result"),
                    card.media_out.as_str(),
                    received
                ),
            ));
        }
        Ok(result)
    }

    fn drive<F, R, W>(
        &self,
        handle: &JobHandle,
        options: &ProcessOptions,
        remaining: &R,
        within: &W,
        on_progress: &mut F,
    ) -> Result<()>
    where
        F: FnMut(&JobStatus),
        R: Fn() -> Result<Duration>,
        W: Fn(Duration) -> Result<Duration>,
    {
        let mut last: Option<JobStatus> = None;
        let mut interval = POLL_INITIAL;
        let mut cancel_sent = false;
        loop {
            let wants_cancel = options.cancel.as_ref().is_some_and(CancelToken::is_cancelled);
            let status = if wants_cancel && !cancel_sent {
                cancel_sent = true;
                self.cancel_within(handle, within(self.request_timeout)?)?
            } else {
                self.poll_within(handle, within(self.request_timeout)?)?
            };
            if last.as_ref() != Some(&status) {
                on_progress(&status);
                last = Some(status.clone());
            }
            match status.state {
                JobState::Complete => return Ok(()),
                JobState::Error => {
                    return Err(HarpError::remote(
                        if status.message.is_empty() {
                            "The endpoint failed to process the media.".to_string()
                        } else {
                            format!("The endpoint failed: {}", status.message)
                        },
                        format!("{}: state=error message={:?}", handle.route(""), status.message),
                    ))
                }
                JobState::Cancelled => {
                    return Err(HarpError::new(
                        ErrorCode::E142_Cancelled,
                        "Processing was cancelled.",
                        format!("{}: state=cancelled", handle.route("")),
                    ))
                }
                JobState::Queued | JobState::Running => {}
            }
            // a pending cancel request is sent without waiting
            if options.cancel.as_ref().is_some_and(CancelToken::is_cancelled) && !cancel_sent {
                continue;
            }
            thread::sleep(interval.min(remaining()?));
            interval = interval.mul_f64(POLL_BACKOFF).min(POLL_MAX);
        }
    }
}
