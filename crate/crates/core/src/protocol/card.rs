//! Model cards and their wire document.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ErrorCode, HarpError, Result};
use crate::media::MediaKind;

pub const SCHEMA_VERSION: i64 = 2;

/// What an endpoint hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputKind {
    #[serde(rename = "audio")]
    Audio,
    #[serde(rename = "midi")]
    Midi,
    #[serde(rename = "labels")]
    Labels,
    #[serde(rename = "audio+labels")]
    AudioLabels,
    #[serde(rename = "midi+labels")]
    MidiLabels,
}

impl OutputKind {
    /// The media kind included in the output, if any.
    pub fn media(self) -> Option<MediaKind> {
        match self {
            OutputKind::Audio | OutputKind::AudioLabels => Some(MediaKind::Audio),
            OutputKind::Midi | OutputKind::MidiLabels => Some(MediaKind::Midi),
            OutputKind::Labels => None,
        }
    }

    pub fn has_labels(self) -> bool {
        matches!(
            self,
            OutputKind::Labels | OutputKind::AudioLabels | OutputKind::MidiLabels
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::Audio => "audio",
            OutputKind::Midi => "midi",
            OutputKind::Labels => "labels",
            OutputKind::AudioLabels => "audio+labels",
            OutputKind::MidiLabels => "midi+labels",
        }
    }
}

/// One user-facing parameter, discriminated on the wire by `"type"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ControlSpec {
    Slider {
        label: String,
        min: f64,
        max: f64,
        step: f64,
        default: f64,
    },
    #[serde(rename = "number")]
    NumberBox { label: String, default: f64 },
    #[serde(rename = "text")]
    TextBox { label: String, default: String },
    Dropdown {
        label: String,
        options: Vec<String>,
        default: String,
    },
    Toggle { label: String, default: bool },
}

impl ControlSpec {
    pub fn label(&self) -> &str {
        match self {
            ControlSpec::Slider { label, .. }
            | ControlSpec::NumberBox { label, .. }
            | ControlSpec::TextBox { label, .. }
            | ControlSpec::Dropdown { label, .. }
            | ControlSpec::Toggle { label, .. } => label,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ControlSpec::Slider { .. } => "slider",
            ControlSpec::NumberBox { .. } => "number",
            ControlSpec::TextBox { .. } => "text",
            ControlSpec::Dropdown { .. } => "dropdown",
            ControlSpec::Toggle { .. } => "toggle",
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match self {
            ControlSpec::Slider {
                min,
                max,
                step,
                default,
                ..
            } => {
                if ![*min, *max, *step, *default].iter().all(|v| v.is_finite()) {
                    return Err("slider bounds must be finite".into());
                }
                if min >= max {
                    return Err(format!("slider min {min} is not below max {max}"));
                }
                if *step <= 0.0 {
                    return Err(format!("slider step {step} must be positive"));
                }
                if default < min || default > max {
                    return Err(format!("slider default {default} outside [{min}, {max}]"));
                }
            }
            ControlSpec::NumberBox { default, .. } if !default.is_finite() => {
                return Err("number default must be finite".into());
            }
            ControlSpec::Dropdown {
                options, default, ..
            } => {
                if options.is_empty() {
                    return Err("dropdown has no options".into());
                }
                if !options.contains(default) {
                    return Err(format!("dropdown default {default:?} is not an option"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardInfo {
    pub name: String,
    pub description: String,
    pub author: String,
    pub tags: Vec<String>,
}

/// An endpoint's self-description.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCard {
    pub name: String,
    pub description: String,
    pub author: String,
    pub tags: Vec<String>,
    pub media_in: MediaKind,
    pub media_out: OutputKind,
    pub controls: Vec<ControlSpec>,
}

#[derive(Serialize, Deserialize)]
struct CardDocument {
    schema_version: i64,
    card: CardInfo,
    media_in: MediaKind,
    media_out: OutputKind,
    controls: Vec<ControlSpec>,
}

impl ModelCard {
    pub fn control(&self, label: &str) -> Option<&ControlSpec> {
        self.controls.iter().find(|c| c.label() == label)
    }

    /// Checks name, label uniqueness and every control's own constraints.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(HarpError::invalid_card("card.name: must be non-empty"));
        }
        let mut seen = HashSet::new();
        for (i, control) in self.controls.iter().enumerate() {
            if !seen.insert(control.label()) {
                return Err(HarpError::invalid_card(format!(
                    "controls[{i}].label: duplicate label {:?}",
                    control.label()
                )));
            }
            control.check().map_err(|reason| {
                HarpError::invalid_card(format!("controls[{i}] ({}): {reason}", control.label()))
            })?;
        }
        Ok(())
    }

    pub fn to_document(&self) -> Value {
        serde_json::to_value(CardDocument {
            schema_version: SCHEMA_VERSION,
            card: CardInfo {
                name: self.name.clone(),
                description: self.description.clone(),
                author: self.author.clone(),
                tags: self.tags.clone(),
            },
            media_in: self.media_in,
            media_out: self.media_out,
            controls: self.controls.clone(),
        })
        .expect("card document serializes")
    }

    pub fn to_json(&self) -> String {
        self.to_document().to_string()
    }
}

/// Parses a card document. Unknown top-level keys are ignored; an unknown
/// control type is an error because it cannot be rendered.
pub fn parse_model_card(text: &str) -> Result<ModelCard> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| HarpError::invalid_card(format!("card: not valid JSON: {e}")))?;
    model_card_from_value(value)
}

pub fn model_card_from_value(value: Value) -> Result<ModelCard> {
    let version = value
        .get("schema_version")
        .ok_or_else(|| HarpError::invalid_card("schema_version: missing"))?
        .as_i64()
        .ok_or_else(|| HarpError::invalid_card("schema_version: not an integer"))?;
    if version != SCHEMA_VERSION {
        return Err(HarpError::new(
            ErrorCode::E111_UnsupportedSchemaVersion,
            "The endpoint uses an unsupported protocol version.",
            format!("schema_version: got {version}, supported {SCHEMA_VERSION}"),
        ));
    }
    let doc: CardDocument = serde_json::from_value(value)
        .map_err(|e| HarpError::invalid_card(format!("card: {e}")))?;
    let card = ModelCard {
        name: doc.card.name,
        description: doc.card.description,
        author: doc.card.author,
        tags: doc.card.tags,
        media_in: doc.media_in,
        media_out: doc.media_out,
        controls: doc.controls,
    };
    card.validate()?;
    Ok(card)
}
