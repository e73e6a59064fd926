//! Client-side building blocks for hosted, asynchronous, remote processing of
//! audio and MIDI: the endpoint protocol client, media codecs, output labels
//! and the undoable editing session.

pub mod error;
pub mod labels;
pub mod media;
pub mod protocol;
pub mod session;

pub use error::{ErrorCode, HarpError, Result};
