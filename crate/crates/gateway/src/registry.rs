//! The endpoint menu: a text file of `name = url` lines.

use std::io;
use std::path::Path;

use serde::Serialize;

use harp_core::protocol::EndpointAddress;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistryEntry {
    pub name: String,
    pub url: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("registry line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("reading registry: {0}")]
    Io(#[from] io::Error),
}

/// Blank lines and lines starting with `#` are skipped. The name ends at the
/// first `=`, so names cannot contain one.
pub fn parse_registry(text: &str) -> Result<Vec<RegistryEntry>, RegistryError> {
    let mut entries = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |reason: String| RegistryError::Syntax {
            line: index + 1,
            reason,
        };
        let (name, url) = line
            .split_once('=')
            .ok_or_else(|| syntax("expected `name = url`".to_string()))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(syntax("empty name".to_string()));
        }
        let address = EndpointAddress::parse(url).map_err(|e| syntax(e.developer_message))?;
        entries.push(RegistryEntry {
            name: name.to_string(),
            url: address.as_str().to_string(),
        });
    }
    Ok(entries)
}

/// A missing file is an empty registry.
pub fn load_registry(path: &Path) -> Result<Vec<RegistryEntry>, RegistryError> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_registry(&text),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}
