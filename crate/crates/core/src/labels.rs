//! Time-stamped output labels: wire format, colors and viewport layout.

use serde_json::{Map, Value};

use crate::error::{HarpError, Result};

/// An 8-bit RGBA color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgba {
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub a: u8,
}

impl Rgba {
    pub const fn rgb(r: u8, g: u8, b: u8) -> Self {
        Rgba { r, g, b, a: 255 }
    }
}

/// Colors handed out by label index when a label names none.
pub const DEFAULT_PALETTE: [Rgba; 8] = [
    Rgba::rgb(0x4E, 0x79, 0xA7),
    Rgba::rgb(0xF2, 0x8E, 0x2B),
    Rgba::rgb(0xE1, 0x57, 0x59),
    Rgba::rgb(0x76, 0xB7, 0xB2),
    Rgba::rgb(0x59, 0xA1, 0x4F),
    Rgba::rgb(0xED, 0xC9, 0x48),
    Rgba::rgb(0xB0, 0x7A, 0xA1),
    Rgba::rgb(0xFF, 0x9D, 0xA7),
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ColorError {
    #[error("expected #RRGGBB or #RRGGBBAA, got {0:?}")]
    Format(String),
}

pub fn parse_color(text: &str) -> Result<Rgba, ColorError> {
    let bad = || ColorError::Format(text.to_string());
    let hex = text.strip_prefix('#').ok_or_else(bad)?;
    if !(hex.len() == 6 || hex.len() == 8) || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
    Ok(Rgba {
        r: byte(0)?,
        g: byte(2)?,
        b: byte(4)?,
        a: if hex.len() == 8 { byte(6)? } else { 255 },
    })
}

/// Uppercase hex; the alpha pair is omitted when fully opaque.
pub fn format_color(color: Rgba) -> String {
    if color.a == 255 {
        format!("#{:02X}{:02X}{:02X}", color.r, color.g, color.b)
    } else {
        format!("#{:02X}{:02X}{:02X}{:02X}", color.r, color.g, color.b, color.a)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Label {
    pub t: f64,
    pub duration: Option<f64>,
    pub text: String,
    pub description: Option<String>,
    pub amplitude: Option<f64>,
    pub pitch: Option<u8>,
    pub color: Option<Rgba>,
    pub link: Option<String>,
}

impl Label {
    pub fn point(t: f64, text: impl Into<String>) -> Self {
        Label {
            t,
            text: text.into(),
            ..Label::default()
        }
    }

    /// The label's own color, or the palette entry for its position.
    pub fn display_color(&self, index: usize) -> Rgba {
        self.color
            .unwrap_or(DEFAULT_PALETTE[index % DEFAULT_PALETTE.len()])
    }
}

pub type LabelSet = Vec<Label>;

fn label_error(index: usize, field: &str, reason: impl std::fmt::Display) -> HarpError {
    HarpError::remote(
        format!("The endpoint returned an invalid label (#{index}, {field})."),
        format!("labels[{index}].{field}: {reason}"),
    )
}

fn optional<'a>(entry: &'a Map<String, Value>, field: &str) -> Option<&'a Value> {
    entry.get(field).filter(|v| !v.is_null())
}

fn parse_entry(index: usize, value: &Value) -> Result<Label> {
    let entry = value
        .as_object()
        .ok_or_else(|| label_error(index, "*", "entry is not an object"))?;
    let number = |field: &str| -> Result<Option<f64>> {
        match optional(entry, field) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| label_error(index, field, "expected a finite number")),
        }
    };
    let string = |field: &str| -> Result<Option<String>> {
        match optional(entry, field) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| label_error(index, field, "expected a string")),
        }
    };

    let t = number("t")?.ok_or_else(|| label_error(index, "t", "missing"))?;
    if t < 0.0 {
        return Err(label_error(index, "t", format!("{t} is negative")));
    }
    let duration = number("duration")?;
    if let Some(d) = duration.filter(|d| *d < 0.0) {
        return Err(label_error(index, "duration", format!("{d} is negative")));
    }
    let text = string("label")?.ok_or_else(|| label_error(index, "label", "missing"))?;
    let amplitude = number("amplitude")?;
    if let Some(a) = amplitude.filter(|a| !(-1.0..=1.0).contains(a)) {
        return Err(label_error(index, "amplitude", format!("{a} outside [-1, 1]")));
    }
    let pitch = match optional(entry, "pitch") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .filter(|p| *p <= 127)
                .ok_or_else(|| label_error(index, "pitch", format!("{v} is not an integer in 0..=127")))?
                as u8,
        ),
    };
    let color = match string("color")? {
        None => None,
        Some(c) => Some(parse_color(&c).map_err(|e| label_error(index, "color", e))?),
    };

    Ok(Label {
        t,
        duration,
        text,
        description: string("description")?,
        amplitude,
        pitch,
        color,
        link: string("link")?,
    })
}

/// Parses the `labels` array of a result document.
pub fn parse_labels(fragment: &Value) -> Result<LabelSet> {
    let entries = fragment
        .as_array()
        .ok_or_else(|| label_error(0, "*", "labels is not an array"))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, v)| parse_entry(i, v))
        .collect()
}

pub fn serialize_label(label: &Label) -> Value {
    serde_json::json!({
        "t": label.t,
        "duration": label.duration,
        "label": label.text,
        "description": label.description,
        "amplitude": label.amplitude,
        "pitch": label.pitch,
        "color": label.color.map(format_color),
        "link": label.link,
    })
}

pub fn serialize_labels(labels: &[Label]) -> Value {
    Value::Array(labels.iter().map(serialize_label).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    Waveform,
    Pianoroll { pitch_min: u8, pitch_max: u8 },
}

/// The visible window of a media display.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    pub start_s: f64,
    pub duration_s: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub mode: ViewMode,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ViewportError {
    #[error("viewport duration must be positive and finite, got {0}")]
    Duration(f64),
    #[error("viewport size must be positive, got {0}x{1}")]
    Size(u32, u32),
    #[error("pitch range {0}..={1} is empty or beyond 127")]
    PitchRange(u8, u8),
}

impl Viewport {
    pub fn new(
        start_s: f64,
        duration_s: f64,
        width_px: u32,
        height_px: u32,
        mode: ViewMode,
    ) -> Result<Self, ViewportError> {
        if !(duration_s > 0.0 && duration_s.is_finite()) || !start_s.is_finite() {
            return Err(ViewportError::Duration(duration_s));
        }
        if width_px == 0 || height_px == 0 {
            return Err(ViewportError::Size(width_px, height_px));
        }
        if let ViewMode::Pianoroll { pitch_min, pitch_max } = mode {
            if pitch_min > pitch_max || pitch_max > 127 {
                return Err(ViewportError::PitchRange(pitch_min, pitch_max));
            }
        }
        Ok(Viewport {
            start_s,
            duration_s,
            width_px,
            height_px,
            mode,
        })
    }

    pub fn waveform(start_s: f64, duration_s: f64, width_px: u32, height_px: u32) -> Result<Self, ViewportError> {
        Self::new(start_s, duration_s, width_px, height_px, ViewMode::Waveform)
    }

    pub fn pianoroll(
        start_s: f64,
        duration_s: f64,
        width_px: u32,
        height_px: u32,
        pitch_min: u8,
        pitch_max: u8,
    ) -> Result<Self, ViewportError> {
        Self::new(
            start_s,
            duration_s,
            width_px,
            height_px,
            ViewMode::Pianoroll { pitch_min, pitch_max },
        )
    }
}

/// Pixel placement of one label inside a viewport.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelGeometry {
    pub x_px: f64,
    pub width_px: f64,
    pub y_px: f64,
    pub visible: bool,
}

/// Maps a label to pixels. Time runs left to right; waveform labels sit at
/// their amplitude (default 0, the midline), piano-roll labels at the center
/// of their pitch row (default the middle of the pitch range).
pub fn layout_label(label: &Label, vp: &Viewport) -> LabelGeometry {
    let width = vp.width_px as f64;
    let height = vp.height_px as f64;
    let span = label.duration.unwrap_or(0.0).max(0.0);

    let x_px = (label.t - vp.start_s) / vp.duration_s * width;
    let width_px = span / vp.duration_s * width;
    let y_px = match vp.mode {
        ViewMode::Waveform => (1.0 - label.amplitude.unwrap_or(0.0)) / 2.0 * height,
        ViewMode::Pianoroll { pitch_min, pitch_max } => {
            let (lo, hi) = (pitch_min as f64, pitch_max as f64);
            let pitch = label.pitch.map_or((lo + hi) / 2.0, f64::from);
            (hi - pitch + 0.5) / (hi - lo + 1.0) * height
        }
    };
    let visible = label.t <= vp.start_s + vp.duration_s && label.t + span >= vp.start_s;

    LabelGeometry {
        x_px,
        width_px,
        y_px,
        visible,
    }
}
