//! Error codes shared by every HARP component.
//!
//! Each error carries one [`ErrorCode`], a short message fit for end users and
//! a developer message that names the offending field, route or value.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The closed set of error codes a caller can observe.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    E100_ConnectionFailed,
    E101_Timeout,
    E110_InvalidCard,
    E111_UnsupportedSchemaVersion,
    E120_MediaTypeMismatch,
    E130_ControlValidation,
    E140_RemoteJobError,
    E141_JobNotFound,
    E142_Cancelled,
    E150_MediaDecode,
    E151_MediaEncode,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 11] = [
        ErrorCode::E100_ConnectionFailed,
        ErrorCode::E101_Timeout,
        ErrorCode::E110_InvalidCard,
        ErrorCode::E111_UnsupportedSchemaVersion,
        ErrorCode::E120_MediaTypeMismatch,
        ErrorCode::E130_ControlValidation,
        ErrorCode::E140_RemoteJobError,
        ErrorCode::E141_JobNotFound,
        ErrorCode::E142_Cancelled,
        ErrorCode::E150_MediaDecode,
        ErrorCode::E151_MediaEncode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::E100_ConnectionFailed => "E100_ConnectionFailed",
            ErrorCode::E101_Timeout => "E101_Timeout",
            ErrorCode::E110_InvalidCard => "E110_InvalidCard",
            ErrorCode::E111_UnsupportedSchemaVersion => "E111_UnsupportedSchemaVersion",
            ErrorCode::E120_MediaTypeMismatch => "E120_MediaTypeMismatch",
            ErrorCode::E130_ControlValidation => "E130_ControlValidation",
            ErrorCode::E140_RemoteJobError => "E140_RemoteJobError",
            ErrorCode::E141_JobNotFound => "E141_JobNotFound",
            ErrorCode::E142_Cancelled => "E142_Cancelled",
            ErrorCode::E150_MediaDecode => "E150_MediaDecode",
            ErrorCode::E151_MediaEncode => "E151_MediaEncode",
        }
    }

    /// Accepts either the full name (`E130_ControlValidation`) or the bare
    /// numeric prefix (`E130`).
    pub fn parse(text: &str) -> Option<ErrorCode> {
        ErrorCode::ALL
            .into_iter()
            .find(|c| c.as_str() == text || c.as_str().split('_').next() == Some(text))
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {user_message}")]
pub struct HarpError {
    pub code: ErrorCode,
    pub user_message: String,
    pub developer_message: String,
}

impl HarpError {
    pub fn new(
        code: ErrorCode,
        user_message: impl Into<String>,
        developer_message: impl Into<String>,
    ) -> Self {
        HarpError {
            code,
            user_message: scrub_user_message(&user_message.into()),
            developer_message: developer_message.into(),
        }
    }

    pub fn connection(developer_message: impl Into<String>) -> Self {
        Self::new(
            ErrorCode::E100_ConnectionFailed,
            "Could not connect to the endpoint.",
            developer_message,
        )
    }

    pub fn timeout(developer_message: impl Into<String>) -> Self {
        Self::new(
            ErrorCode::E101_Timeout,
            "The endpoint did not respond in time.",
            developer_message,
        )
    }

    pub fn invalid_card(developer_message: impl Into<String>) -> Self {
        Self::new(
            ErrorCode::E110_InvalidCard,
            "The endpoint description is invalid.",
            developer_message,
        )
    }

    pub fn control(label: &str, reason: impl fmt::Display) -> Self {
        Self::new(
            ErrorCode::E130_ControlValidation,
            format!("{label} {reason}"),
            format!("controls.{label}: {reason}"),
        )
    }

    pub fn remote(user_message: impl Into<String>, developer_message: impl Into<String>) -> Self {
        Self::new(ErrorCode::E140_RemoteJobError, user_message, developer_message)
    }

    pub fn decode(developer_message: impl Into<String>) -> Self {
        Self::new(
            ErrorCode::E150_MediaDecode,
            "The media file could not be read.",
            developer_message,
        )
    }

    pub fn encode(developer_message: impl Into<String>) -> Self {
        Self::new(
            ErrorCode::E151_MediaEncode,
            "The media could not be written.",
            developer_message,
        )
    }
}

pub type Result<T, E = HarpError> = std::result::Result<T, E>;

/// Drops URL-looking tokens and everything from the first line break on, so
/// user-facing strings never leak addresses or traces.
fn scrub_user_message(text: &str) -> String {
    let first_line = text.lines().next().unwrap_or("");
    first_line
        .split(' ')
        .filter(|word| !word.contains("://"))
        .collect::<Vec<_>>()
        .join(" ")
}
