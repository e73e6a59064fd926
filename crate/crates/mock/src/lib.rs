//! A reference endpoint speaking the HARP protocol with three deterministic
//! behaviors: `gain` (audio to audio), `transpose` (MIDI to MIDI) and
//! `onsets` (audio to labels).

mod behavior;
mod server;

pub use behavior::{
    behavior_gain, behavior_onsets, behavior_transpose, BehaviorKind, MockBehavior, ONSET_HOP,
    ONSET_WINDOW,
};
pub use server::{router, run_mock_endpoint, MockServer};
