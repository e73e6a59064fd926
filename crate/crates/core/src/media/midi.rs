//! Standard MIDI File parsing and writing, and tempo-map time conversion.
//!
//! Only notes and tempo survive a parse. Controller, pitch-bend, aftertouch,
//! program and non-tempo meta events are read past and dropped.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{HarpError, Result};

pub const DEFAULT_US_PER_QUARTER: u32 = 500_000;
const MAX_TEMPO: u32 = 0x00FF_FFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TempoEvent {
    pub tick: u64,
    pub us_per_quarter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Note {
    pub start_tick: u64,
    pub end_tick: u64,
    pub pitch: u8,
    pub velocity: u8,
    pub channel: u8,
}

impl Note {
    pub fn is_valid(&self) -> bool {
        self.pitch <= 127
            && (1..=127).contains(&self.velocity)
            && self.channel <= 15
            && self.end_tick > self.start_tick
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MidiSequence {
    pub ticks_per_quarter: u16,
    pub tempo_events: Vec<TempoEvent>,
    pub notes: Vec<Note>,
    pub end_tick: u64,
}

/// One note resolved to wall-clock time, as drawn on a piano roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedNote {
    pub pitch: u8,
    pub velocity: u8,
    pub start_s: f64,
    pub duration_s: f64,
    pub channel: u8,
}

impl MidiSequence {
    /// Builds a sequence, normalizing it into canonical form: tempo events
    /// sorted with one entry per tick (last wins) and a default at tick 0,
    /// notes sorted, and `end_tick` raised to cover every event.
    pub fn new(
        ticks_per_quarter: u16,
        tempo_events: Vec<TempoEvent>,
        mut notes: Vec<Note>,
        end_tick: u64,
    ) -> Result<Self> {
        if ticks_per_quarter == 0 || ticks_per_quarter & 0x8000 != 0 {
            return Err(HarpError::decode(format!(
                "midi: ticks_per_quarter {ticks_per_quarter} out of range"
            )));
        }
        if let Some(bad) = tempo_events
            .iter()
            .find(|t| t.us_per_quarter == 0 || t.us_per_quarter > MAX_TEMPO)
        {
            return Err(HarpError::decode(format!(
                "midi: tempo {} us/quarter at tick {} out of range",
                bad.us_per_quarter, bad.tick
            )));
        }
        if let Some(bad) = notes.iter().find(|n| !n.is_valid()) {
            return Err(HarpError::decode(format!("midi: invalid note {bad:?}")));
        }

        let mut tempos = tempo_events;
        tempos.sort_by_key(|t| t.tick);
        let mut deduped: Vec<TempoEvent> = Vec::with_capacity(tempos.len() + 1);
        for event in tempos {
            match deduped.last_mut() {
                Some(last) if last.tick == event.tick => *last = event,
                _ => deduped.push(event),
            }
        }
        if deduped.first().is_none_or(|t| t.tick != 0) {
            deduped.insert(
                0,
                TempoEvent {
                    tick: 0,
                    us_per_quarter: DEFAULT_US_PER_QUARTER,
                },
            );
        }

        notes.sort();
        let last_note_end = notes.iter().map(|n| n.end_tick).max().unwrap_or(0);
        let last_tempo = deduped.last().map_or(0, |t| t.tick);
        Ok(MidiSequence {
            ticks_per_quarter,
            tempo_events: deduped,
            notes,
            end_tick: end_tick.max(last_note_end).max(last_tempo),
        })
    }

    pub fn empty(ticks_per_quarter: u16) -> Self {
        MidiSequence::new(ticks_per_quarter, Vec::new(), Vec::new(), 0)
            .expect("empty sequence with valid tpq")
    }

    pub fn duration_s(&self) -> f64 {
        ticks_to_seconds(self, self.end_tick)
    }
}

/// Converts an absolute tick to seconds by walking the tempo map segment by
/// segment.
pub fn ticks_to_seconds(seq: &MidiSequence, tick: u64) -> f64 {
    let tpq = seq.ticks_per_quarter as f64;
    let mut seconds = 0.0;
    let mut segment_start = 0u64;
    let mut tempo = DEFAULT_US_PER_QUARTER;
    for event in &seq.tempo_events {
        if event.tick >= tick {
            break;
        }
        seconds += (event.tick - segment_start) as f64 * tempo as f64 / (tpq * 1e6);
        segment_start = event.tick;
        tempo = event.us_per_quarter;
    }
    seconds + (tick - segment_start) as f64 * tempo as f64 / (tpq * 1e6)
}

pub fn extract_notes(seq: &MidiSequence) -> Vec<TimedNote> {
    let mut out: Vec<TimedNote> = seq
        .notes
        .iter()
        .map(|n| {
            let start_s = ticks_to_seconds(seq, n.start_tick);
            TimedNote {
                pitch: n.pitch,
                velocity: n.velocity,
                start_s,
                duration_s: ticks_to_seconds(seq, n.end_tick) - start_s,
                channel: n.channel,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.channel.cmp(&b.channel))
    });
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(HarpError::decode(format!(
                "midi: unexpected end of data reading {what} at offset {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn byte(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.byte("variable-length quantity")?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(HarpError::decode(format!(
            "midi: variable-length quantity longer than 4 bytes at offset {}",
            self.pos
        )))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

/// Notes and tempo changes read from one MTrk chunk.
struct TrackContent {
    notes: Vec<Note>,
    tempos: Vec<TempoEvent>,
    end_tick: u64,
}

fn parse_track(body: &[u8], track_index: usize) -> Result<TrackContent> {
    let mut reader = Reader { bytes: body, pos: 0 };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut pending: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
    let mut notes = Vec::new();
    let mut tempos = Vec::new();

    let close = |notes: &mut Vec<Note>,
                 pending: &mut HashMap<(u8, u8), VecDeque<(u64, u8)>>,
                 channel: u8,
                 pitch: u8,
                 tick: u64| {
        if let Some((start, velocity)) = pending.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
            // zero-length notes carry nothing to draw or play
            if tick > start {
                notes.push(Note {
                    start_tick: start,
                    end_tick: tick,
                    pitch,
                    velocity,
                    channel,
                });
            }
        }
    };

    while !reader.at_end() {
        tick += reader.vlq()? as u64;
        let first = reader.byte("event status")?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            running.ok_or_else(|| {
                HarpError::decode(format!(
                    "midi: track {track_index}: data byte {first:#04x} without running status at offset {}",
                    reader.pos - 1
                ))
            })?
        };

        match status {
            0x80..=0xEF => {
                running = Some(status);
                let data1 = if first & 0x80 != 0 {
                    reader.byte("channel data")?
                } else {
                    first
                };
                let kind = status & 0xF0;
                let channel = status & 0x0F;
                let data2 = if kind == 0xC0 || kind == 0xD0 {
                    0
                } else {
                    reader.byte("channel data")?
                };
                if data1 > 0x7F || data2 > 0x7F {
                    return Err(HarpError::decode(format!(
                        "midi: track {track_index}: data byte out of range at offset {}",
                        reader.pos
                    )));
                }
                match kind {
                    0x90 if data2 > 0 => pending
                        .entry((channel, data1))
                        .or_default()
                        .push_back((tick, data2)),
                    0x80 | 0x90 => close(&mut notes, &mut pending, channel, data1, tick),
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = reader.vlq()? as usize;
                reader.take(len, "sysex data")?;
            }
            0xFF => {
                running = None;
                let kind = reader.byte("meta type")?;
                let len = reader.vlq()? as usize;
                let data = reader.take(len, "meta data")?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(HarpError::decode(format!(
                                "midi: track {track_index}: tempo event with length {len}"
                            )));
                        }
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us == 0 {
                            return Err(HarpError::decode(format!(
                                "midi: track {track_index}: zero tempo at tick {tick}"
                            )));
                        }
                        tempos.push(TempoEvent {
                            tick,
                            us_per_quarter: us,
                        });
                    }
                    0x2F => break,
                    _ => {}
                }
            }
            _ => {
                return Err(HarpError::decode(format!(
                    "midi: track {track_index}: status {status:#04x} not allowed in a file"
                )))
            }
        }
    }

    // close whatever is still sounding at the end of the track
    let mut leftovers: Vec<(u8, u8)> = pending.keys().copied().collect();
    leftovers.sort();
    for (channel, pitch) in leftovers {
        while pending.get(&(channel, pitch)).is_some_and(|q| !q.is_empty()) {
            close(&mut notes, &mut pending, channel, pitch, tick);
        }
    }

    Ok(TrackContent {
        notes,
        tempos,
        end_tick: tick,
    })
}

/// Parses an SMF of format 0 or 1. Tracks are merged onto one timeline.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiSequence> {
    let mut reader = Reader { bytes, pos: 0 };
    if reader.take(4, "header id").ok() != Some(b"MThd".as_slice()) {
        return Err(HarpError::decode("midi: missing MThd header"));
    }
    let header_len = u32::from_be_bytes(reader.take(4, "header length")?.try_into().unwrap()) as usize;
    if header_len < 6 {
        return Err(HarpError::decode(format!("midi: header length {header_len} < 6")));
    }
    let header = reader.take(header_len, "header")?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let track_count = u16::from_be_bytes([header[2], header[3]]) as usize;
    let division = u16::from_be_bytes([header[4], header[5]]);

    if format > 1 {
        return Err(HarpError::decode(format!("midi: SMF format {format} is not supported")));
    }
    if division & 0x8000 != 0 {
        return Err(HarpError::decode("midi: SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(HarpError::decode("midi: ticks per quarter is zero"));
    }

    let mut notes = Vec::new();
    let mut tempos = Vec::new();
    let mut end_tick = 0;
    let mut tracks_read = 0;
    while tracks_read < track_count {
        let id = reader.take(4, "chunk id")?;
        let len = u32::from_be_bytes(reader.take(4, "chunk length")?.try_into().unwrap()) as usize;
        let body = reader.take(len, "chunk body")?;
        if id != b"MTrk" {
            continue;
        }
        let track = parse_track(body, tracks_read)?;
        notes.extend(track.notes);
        tempos.extend(track.tempos);
        end_tick = end_tick.max(track.end_tick);
        tracks_read += 1;
    }

    MidiSequence::new(division, tempos, notes, end_tick)
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7F) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = 0x80 | (value & 0x7F) as u8;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Serializes as a single-track format-0 file.
///
/// At equal ticks, note-offs precede note-ons, and note-ons are ordered by
/// their end tick so that FIFO pairing on re-parse recovers the same notes.
pub fn serialize_midi(seq: &MidiSequence) -> Result<Vec<u8>> {
    // (tick, order, payload): order 0 = tempo, 1 = note-off, 2 = note-on
    let mut events: Vec<(u64, u8, u64, [u8; 3])> = Vec::new();
    for tempo in &seq.tempo_events {
        let b = tempo.us_per_quarter.to_be_bytes();
        events.push((tempo.tick, 0, 0, [b[1], b[2], b[3]]));
    }
    for note in &seq.notes {
        if !note.is_valid() {
            return Err(HarpError::encode(format!("midi: invalid note {note:?}")));
        }
        events.push((note.end_tick, 1, 0, [0x80 | note.channel, note.pitch, 0x40]));
        events.push((
            note.start_tick,
            2,
            note.end_tick,
            [0x90 | note.channel, note.pitch, note.velocity],
        ));
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));

    let mut track = Vec::new();
    let mut now = 0u64;
    for (tick, order, _, payload) in events {
        let delta = u32::try_from(tick - now)
            .ok()
            .filter(|d| *d <= 0x0FFF_FFFF)
            .ok_or_else(|| HarpError::encode(format!("midi: delta {} too large", tick - now)))?;
        write_vlq(&mut track, delta);
        now = tick;
        if order == 0 {
            track.extend_from_slice(&[0xFF, 0x51, 0x03]);
        }
        track.extend_from_slice(&payload);
    }
    let end = seq.end_tick.max(now);
    write_vlq(
        &mut track,
        u32::try_from(end - now).map_err(|_| HarpError::encode("midi: end tick too far"))?,
    );
    track.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&seq.ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}
