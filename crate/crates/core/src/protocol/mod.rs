//! The HARP endpoint protocol, version 2.
//!
//! Routes, relative to an endpoint's base URL:
//!
//! | method | path                    | reply                              |
//! |--------|-------------------------|------------------------------------|
//! | GET    | `/harp/card`            | card document                      |
//! | POST   | `/harp/process`         | 202 `{"job_id"}` (multipart input) |
//! | GET    | `/harp/jobs/{id}`       | status document, 404 if unknown    |
//! | GET    | `/harp/jobs/{id}/result`| result document, 409 if not done   |
//! | GET    | `/harp/jobs/{id}/media` | raw output bytes                   |
//! | POST   | `/harp/jobs/{id}/cancel`| status document                    |

mod card;
mod client;
mod controls;

pub use card::{
    model_card_from_value, parse_model_card, CardInfo, ControlSpec, ModelCard, OutputKind,
    SCHEMA_VERSION,
};
pub use client::{
    CancelToken, EndpointAddress, HarpClient, JobHandle, JobState, JobStatus, MediaPayload,
    ProcessOptions, ProcessResult, CARD_TIMEOUT, POLL_INITIAL, POLL_MAX, PROCESS_BUDGET,
};
pub use controls::{coerce_control_text, validate_control_values, ControlValue, ControlValues};
