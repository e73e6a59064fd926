use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::card::{ControlSpec, ModelCard};
use crate::error::{HarpError, Result};

/// A single control value as carried on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl ControlValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ControlValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ControlValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ControlValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ControlValue::Bool(_) => "a boolean",
            ControlValue::Number(_) => "a number",
            ControlValue::Text(_) => "a string",
        }
    }
}

impl fmt::Display for ControlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlValue::Bool(b) => write!(f, "{b}"),
            ControlValue::Number(n) => write!(f, "{n}"),
            ControlValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for ControlValue {
    fn from(v: f64) -> Self {
        ControlValue::Number(v)
    }
}

impl From<bool> for ControlValue {
    fn from(v: bool) -> Self {
        ControlValue::Bool(v)
    }
}

impl From<&str> for ControlValue {
    fn from(v: &str) -> Self {
        ControlValue::Text(v.to_string())
    }
}

/// Control values keyed by label.
pub type ControlValues = BTreeMap<String, ControlValue>;

fn check_value(spec: &ControlSpec, value: &ControlValue) -> Result<()> {
    let label = spec.label();
    let wrong_type = |expected: &str| {
        HarpError::control(label, format!("must be {expected}, got {}", value.kind()))
    };
    match spec {
        ControlSpec::Slider { min, max, .. } => {
            let v = value.as_f64().ok_or_else(|| wrong_type("a number"))?;
            if !v.is_finite() || v < *min || v > *max {
                return Err(HarpError::control(label, format!("out of range [{min},{max}]")));
            }
        }
        ControlSpec::NumberBox { .. } => {
            let v = value.as_f64().ok_or_else(|| wrong_type("a number"))?;
            if !v.is_finite() {
                return Err(HarpError::control(label, "must be a finite number"));
            }
        }
        ControlSpec::TextBox { .. } => {
            value.as_str().ok_or_else(|| wrong_type("a string"))?;
        }
        ControlSpec::Dropdown { options, .. } => {
            let v = value.as_str().ok_or_else(|| wrong_type("a string"))?;
            if !options.iter().any(|o| o == v) {
                return Err(HarpError::control(
                    label,
                    format!("must be one of [{}]", options.join(", ")),
                ));
            }
        }
        ControlSpec::Toggle { .. } => {
            value.as_bool().ok_or_else(|| wrong_type("true or false"))?;
        }
    }
    Ok(())
}

fn default_value(spec: &ControlSpec) -> ControlValue {
    match spec {
        ControlSpec::Slider { default, .. } | ControlSpec::NumberBox { default, .. } => {
            ControlValue::Number(*default)
        }
        ControlSpec::TextBox { default, .. } | ControlSpec::Dropdown { default, .. } => {
            ControlValue::Text(default.clone())
        }
        ControlSpec::Toggle { default, .. } => ControlValue::Bool(*default),
    }
}

/// Returns a complete value map for `card`: every control gets either the
/// given value (checked) or its default. Unknown labels are rejected.
pub fn validate_control_values(card: &ModelCard, given: &ControlValues) -> Result<ControlValues> {
    if let Some(unknown) = given.keys().find(|label| card.control(label).is_none()) {
        return Err(HarpError::control(unknown, "is not a control of this endpoint"));
    }
    card.controls
        .iter()
        .map(|spec| {
            let value = match given.get(spec.label()) {
                Some(v) => {
                    check_value(spec, v)?;
                    v.clone()
                }
                None => default_value(spec),
            };
            Ok((spec.label().to_string(), value))
        })
        .collect()
}

/// Turns command-line text into a value of the type `spec` expects.
pub fn coerce_control_text(spec: &ControlSpec, text: &str) -> Result<ControlValue> {
    match spec {
        ControlSpec::Slider { .. } | ControlSpec::NumberBox { .. } => text
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(ControlValue::Number)
            .ok_or_else(|| HarpError::control(spec.label(), format!("expects a number, got {text:?}"))),
        ControlSpec::Toggle { .. } => match text {
            "true" => Ok(ControlValue::Bool(true)),
            "false" => Ok(ControlValue::Bool(false)),
            _ => Err(HarpError::control(
                spec.label(),
                format!("expects true or false, got {text:?}"),
            )),
        },
        ControlSpec::TextBox { .. } | ControlSpec::Dropdown { .. } => {
            Ok(ControlValue::Text(text.to_string()))
        }
    }
}
