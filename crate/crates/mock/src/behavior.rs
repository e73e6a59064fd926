//! The three deterministic transforms the mock endpoint can serve.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use harp_core::labels::{Label, LabelSet};
use harp_core::media::{AudioBuffer, MediaKind, MidiSequence};
use harp_core::protocol::{ControlSpec, ModelCard, OutputKind};

/// Analysis window for onset detection, in samples.
pub const ONSET_WINDOW: usize = 512;
/// Hop between analysis frames, in samples.
pub const ONSET_HOP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BehaviorKind {
    Gain,
    Transpose,
    Onsets,
}

impl BehaviorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorKind::Gain => "gain",
            BehaviorKind::Transpose => "transpose",
            BehaviorKind::Onsets => "onsets",
        }
    }

    /// The control label this behavior reads.
    pub fn control_label(self) -> &'static str {
        match self {
            BehaviorKind::Gain => "gain",
            BehaviorKind::Transpose => "semitones",
            BehaviorKind::Onsets => "threshold",
        }
    }

    pub fn card(self) -> ModelCard {
        let slider = |label: &str, min: f64, max: f64, step: f64, default: f64| ControlSpec::Slider {
            label: label.to_string(),
            min,
            max,
            step,
            default,
        };
        let (name, description, media_in, media_out, control) = match self {
            BehaviorKind::Gain => (
                "Gain",
                "Multiplies every sample by a constant and clips to full scale.",
                MediaKind::Audio,
                OutputKind::Audio,
                slider("gain", 0.0, 2.0, 0.01, 1.0),
            ),
            BehaviorKind::Transpose => (
                "Transpose",
                "Shifts every note by a number of semitones.",
                MediaKind::Midi,
                OutputKind::Midi,
                slider("semitones", -12.0, 12.0, 1.0, 0.0),
            ),
            BehaviorKind::Onsets => (
                "Onsets",
                "Marks frames where the RMS level rises through a threshold.",
                MediaKind::Audio,
                OutputKind::Labels,
                slider("threshold", 0.01, 1.0, 0.01, 0.1),
            ),
        };
        ModelCard {
            name: name.to_string(),
            description: description.to_string(),
            author: "HARP mock endpoint".to_string(),
            tags: vec!["mock".to_string(), self.as_str().to_string()],
            media_in,
            media_out,
            controls: vec![control],
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gain" => Ok(BehaviorKind::Gain),
            "transpose" => Ok(BehaviorKind::Transpose),
            "onsets" => Ok(BehaviorKind::Onsets),
            other => Err(format!("unknown behavior {other:?}, expected gain, transpose or onsets")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockBehavior {
    pub kind: BehaviorKind,
    /// Time each job spends running before it completes.
    pub artificial_delay: Duration,
}

impl MockBehavior {
    pub fn new(kind: BehaviorKind) -> Self {
        MockBehavior {
            kind,
            artificial_delay: Duration::ZERO,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.artificial_delay = delay;
        self
    }
}

pub fn behavior_gain(buffer: &AudioBuffer, gain: f64) -> AudioBuffer {
    let channels = buffer
        .channels
        .iter()
        .map(|c| {
            c.iter()
                .map(|&s| (s as f64 * gain).clamp(-1.0, 1.0) as f32)
                .collect()
        })
        .collect();
    AudioBuffer {
        sample_rate: buffer.sample_rate,
        channels,
    }
}

pub fn behavior_transpose(seq: &MidiSequence, semitones: i32) -> MidiSequence {
    let mut out = seq.clone();
    for note in &mut out.notes {
        note.pitch = (note.pitch as i32 + semitones).clamp(0, 127) as u8;
    }
    out.notes.sort();
    out
}

/// Emits a point label at the start of every full analysis frame whose RMS
/// reaches `threshold` after a frame (or the start of the signal) below it.
pub fn behavior_onsets(buffer: &AudioBuffer, threshold: f64) -> LabelSet {
    let mono = buffer.mono_mix();
    let rate = buffer.sample_rate as f64;
    let mut labels = LabelSet::new();
    let mut below = true;
    let mut start = 0;
    while start + ONSET_WINDOW <= mono.len() {
        let energy: f64 = mono[start..start + ONSET_WINDOW]
            .iter()
            .map(|&s| s as f64 * s as f64)
            .sum();
        let rms = (energy / ONSET_WINDOW as f64).sqrt();
        if below && rms >= threshold {
            labels.push(Label {
                t: start as f64 / rate,
                description: Some(format!("frame RMS {rms:.4}")),
                amplitude: Some(rms.min(1.0)),
                ..Label::point(0.0, "onset")
            });
        }
        below = rms < threshold;
        start += ONSET_HOP;
    }
    labels
}
