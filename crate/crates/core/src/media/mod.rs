//! In-memory audio and MIDI, their file codecs, and display helpers.

mod display;
mod midi;
mod preview;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{HarpError, Result};

pub use display::{waveform_minmax, WaveformBins};
pub use midi::{
    extract_notes, parse_midi, serialize_midi, ticks_to_seconds, MidiSequence, Note, TempoEvent,
    TimedNote, DEFAULT_US_PER_QUARTER,
};
pub use preview::render_midi_preview;
pub use wav::{decode_wav, decode_wav_with_format, encode_wav, SampleFormat};

/// Largest media payload the client will upload.
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Audio,
    Midi,
}

impl MediaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Audio => "audio",
            MediaKind::Midi => "midi",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            MediaKind::Audio => "audio/wav",
            MediaKind::Midi => "audio/midi",
        }
    }

    pub fn file_extension(self) -> &'static str {
        match self {
            MediaKind::Audio => "wav",
            MediaKind::Midi => "mid",
        }
    }
}

impl std::fmt::Display for MediaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Picks a media kind from magic bytes, falling back to the file extension
/// only when neither magic matches.
pub fn detect_media_kind(bytes: &[u8], filename: &str) -> Option<MediaKind> {
    if bytes.starts_with(b"RIFF") {
        return Some(MediaKind::Audio);
    }
    if bytes.starts_with(b"MThd") {
        return Some(MediaKind::Midi);
    }
    let ext = filename.rsplit_once('.')?.1.to_ascii_lowercase();
    match ext.as_str() {
        "wav" | "wave" => Some(MediaKind::Audio),
        "mid" | "midi" | "smf" => Some(MediaKind::Midi),
        _ => None,
    }
}

/// Planar audio with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f32>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f32>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(HarpError::decode("audio: sample_rate must be positive"));
        }
        let Some(first) = channels.first() else {
            return Err(HarpError::decode("audio: at least one channel required"));
        };
        let frames = first.len();
        if let Some(i) = channels.iter().position(|c| c.len() != frames) {
            return Err(HarpError::decode(format!(
                "audio: channel {i} has {} frames, channel 0 has {frames}",
                channels[i].len()
            )));
        }
        Ok(AudioBuffer {
            sample_rate,
            channels,
        })
    }

    pub fn frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    /// Average of all channels.
    pub fn mono_mix(&self) -> Vec<f32> {
        let count = self.channels.len() as f32;
        (0..self.frames())
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f32>() / count)
            .collect()
    }
}

/// Decoded media of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Media {
    Audio(AudioBuffer),
    Midi(MidiSequence),
}

impl Media {
    pub fn kind(&self) -> MediaKind {
        match self {
            Media::Audio(_) => MediaKind::Audio,
            Media::Midi(_) => MediaKind::Midi,
        }
    }

    pub fn decode(kind: MediaKind, bytes: &[u8]) -> Result<Media> {
        match kind {
            MediaKind::Audio => decode_wav(bytes).map(Media::Audio),
            MediaKind::Midi => parse_midi(bytes).map(Media::Midi),
        }
    }

    /// Canonical file bytes: 32-bit float WAV for audio, format-0 SMF for MIDI.
    pub fn encode(&self) -> Result<Vec<u8>> {
        match self {
            Media::Audio(buffer) => encode_wav(buffer, SampleFormat::Float32),
            Media::Midi(seq) => serialize_midi(seq),
        }
    }

    pub fn duration_s(&self) -> f64 {
        match self {
            Media::Audio(buffer) => buffer.duration_s(),
            Media::Midi(seq) => seq.duration_s(),
        }
    }
}

/// Checks that `bytes` decode as `kind`, mapping failure to E150.
pub fn ensure_decodable(kind: MediaKind, bytes: &[u8]) -> Result<()> {
    Media::decode(kind, bytes).map(|_| ())
}
