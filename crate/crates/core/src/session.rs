//! The document being edited and its undo/redo history.

use std::collections::VecDeque;

use sha2::{Digest, Sha256};

use crate::error::{HarpError, Result};
use crate::labels::{serialize_labels, LabelSet};
use crate::media::{detect_media_kind, Media, MediaKind};
use crate::protocol::{EndpointAddress, HarpClient, ModelCard, ProcessResult, CARD_TIMEOUT};

/// Maximum number of snapshots kept on each history stack.
pub const HISTORY_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub media: Option<Media>,
    pub labels: LabelSet,
    pub source_name: String,
}

impl Document {
    pub fn media_kind(&self) -> Option<MediaKind> {
        self.media.as_ref().map(Media::kind)
    }

    /// Hex SHA-256 over a canonical rendering of media, labels and name.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        match &self.media {
            None => field(b"none"),
            Some(Media::Audio(buffer)) => {
                field(b"audio");
                field(&buffer.sample_rate.to_le_bytes());
                for channel in &buffer.channels {
                    let raw: Vec<u8> = channel.iter().flat_map(|s| s.to_bits().to_le_bytes()).collect();
                    field(&raw);
                }
            }
            Some(Media::Midi(seq)) => {
                field(b"midi");
                field(&seq.ticks_per_quarter.to_le_bytes());
                for t in &seq.tempo_events {
                    field(&[t.tick.to_le_bytes(), (t.us_per_quarter as u64).to_le_bytes()].concat());
                }
                for n in &seq.notes {
                    let mut raw = Vec::with_capacity(19);
                    raw.extend_from_slice(&n.start_tick.to_le_bytes());
                    raw.extend_from_slice(&n.end_tick.to_le_bytes());
                    raw.extend_from_slice(&[n.pitch, n.velocity, n.channel]);
                    field(&raw);
                }
                field(&seq.end_tick.to_le_bytes());
            }
        }
        field(serialize_labels(&self.labels).to_string().as_bytes());
        field(self.source_name.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// The selected endpoint and its card.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointBinding {
    pub address: EndpointAddress,
    pub card: ModelCard,
}

/// Editing session: current document, bounded history, selected endpoint and
/// the user-facing status and info lines.
///
/// Every mutating method either succeeds or leaves the session untouched.
#[derive(Debug, Clone, Default)]
pub struct Session {
    current: Document,
    undo_stack: VecDeque<Document>,
    redo_stack: Vec<Document>,
    endpoint: Option<EndpointBinding>,
    status_line: String,
    info_line: String,
    last_error: Option<HarpError>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> &Document {
        &self.current
    }

    pub fn endpoint(&self) -> Option<&EndpointBinding> {
        self.endpoint.as_ref()
    }

    pub fn status_line(&self) -> &str {
        &self.status_line
    }

    pub fn info_line(&self) -> &str {
        &self.info_line
    }

    pub fn last_error(&self) -> Option<&HarpError> {
        self.last_error.as_ref()
    }

    pub fn can_undo(&self) -> bool {
        !self.undo_stack.is_empty()
    }

    pub fn can_redo(&self) -> bool {
        !self.redo_stack.is_empty()
    }

    pub fn undo_depth(&self) -> usize {
        self.undo_stack.len()
    }

    pub fn redo_depth(&self) -> usize {
        self.redo_stack.len()
    }

    pub fn set_status(&mut self, text: impl Into<String>) {
        self.status_line = text.into();
    }

    pub fn set_info(&mut self, text: impl Into<String>) {
        self.info_line = text.into();
    }

    fn commit(&mut self, next: Document) {
        let previous = std::mem::replace(&mut self.current, next);
        self.undo_stack.push_back(previous);
        while self.undo_stack.len() > HISTORY_DEPTH {
            self.undo_stack.pop_front();
        }
        self.redo_stack.clear();
    }

    fn mismatch_note(&self) -> Option<String> {
        let binding = self.endpoint.as_ref()?;
        let kind = self.current.media_kind()?;
        (kind != binding.card.media_in).then(|| {
            format!(
                "{} expects {} input but the loaded file is {}.",
                binding.card.name, binding.card.media_in, kind
            )
        })
    }

    /// Replaces the document with a decoded file. Magic bytes decide the
    /// kind; the extension only breaks ties.
    pub fn load_media(&mut self, bytes: &[u8], filename: &str) -> Result<()> {
        let kind = detect_media_kind(bytes, filename).ok_or_else(|| {
            HarpError::decode(format!("{filename}: neither RIFF nor MThd magic, unknown extension"))
        })?;
        let media = Media::decode(kind, bytes).map_err(|mut e| {
            e.developer_message = format!("{filename}: {}", e.developer_message);
            e
        })?;
        self.commit(Document {
            media: Some(media),
            labels: LabelSet::new(),
            source_name: filename.to_string(),
        });
        self.status_line = format!("Opened {filename}");
        self.info_line = self.mismatch_note().unwrap_or_default();
        Ok(())
    }

    /// Fetches the endpoint's card and selects it. The previous endpoint is
    /// kept if the fetch fails.
    pub fn set_endpoint(&mut self, client: &HarpClient, address: &EndpointAddress) -> Result<ModelCard> {
        let card = client.fetch_card(address, CARD_TIMEOUT)?;
        self.attach_endpoint(address.clone(), card.clone());
        Ok(card)
    }

    /// Selects an endpoint whose card was fetched elsewhere.
    pub fn attach_endpoint(&mut self, address: EndpointAddress, card: ModelCard) {
        self.status_line = format!("Loaded: {}", card.name);
        self.endpoint = Some(EndpointBinding { address, card });
        self.info_line = self
            .mismatch_note()
            .unwrap_or_else(|| self.endpoint.as_ref().unwrap().card.description.clone());
    }

    /// Records a processing result as a new undoable step. Media is replaced
    /// only if the result carries some; labels are always replaced.
    pub fn apply_result(&mut self, result: &ProcessResult) -> Result<()> {
        let media = match &result.media {
            Some(payload) => Some(Media::decode(payload.kind, &payload.bytes)?),
            None => self.current.media.clone(),
        };
        let next = Document {
            media,
            labels: result.labels.clone(),
            source_name: self.current.source_name.clone(),
        };
        self.commit(next);
        self.status_line = match &self.endpoint {
            Some(binding) => format!("Processed with {}", binding.card.name),
            None => "Processed".to_string(),
        };
        Ok(())
    }

    pub fn undo(&mut self) -> bool {
        let Some(previous) = self.undo_stack.pop_back() else {
            return false;
        };
        let current = std::mem::replace(&mut self.current, previous);
        self.redo_stack.push(current);
        self.status_line = "Undo".to_string();
        true
    }

    pub fn redo(&mut self) -> bool {
        let Some(next) = self.redo_stack.pop() else {
            return false;
        };
        let current = std::mem::replace(&mut self.current, next);
        self.undo_stack.push_back(current);
        self.status_line = "Redo".to_string();
        true
    }

    pub fn report_error(&mut self, err: HarpError) {
        self.status_line = format!("{}: {}", err.code, err.user_message);
        self.last_error = Some(err);
    }
}
