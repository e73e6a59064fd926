//! Offline MIDI preview: one sine oscillator per note.

use std::f64::consts::TAU;

use super::{ticks_to_seconds, AudioBuffer, MidiSequence};

const NOTE_GAIN: f64 = 0.2;
const RAMP_S: f64 = 0.010;
const PEAK_LIMIT: f32 = 0.9;

pub(crate) fn pitch_to_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

/// Renders a mono preview. Each note gets a sine at its equal-tempered
/// frequency with amplitude `velocity / 127 * 0.2` and 10 ms linear attack
/// and release inside the note span. The mix is scaled down to peak 0.9 only
/// if it exceeds that.
pub fn render_midi_preview(seq: &MidiSequence, sample_rate: u32) -> AudioBuffer {
    let rate = sample_rate.max(1) as f64;
    let total = (seq.duration_s() * rate).round() as usize;
    let mut mix = vec![0f64; total];
    let ramp = RAMP_S * rate;

    for note in &seq.notes {
        let start = (ticks_to_seconds(seq, note.start_tick) * rate).round() as usize;
        let end = ((ticks_to_seconds(seq, note.end_tick) * rate).round() as usize).min(total);
        if end <= start {
            continue;
        }
        let step = TAU * pitch_to_hz(note.pitch) / rate;
        let amplitude = note.velocity as f64 / 127.0 * NOTE_GAIN;
        let len = (end - start) as f64;
        for (i, out) in mix[start..end].iter_mut().enumerate() {
            let pos = i as f64;
            let envelope = (pos / ramp).min((len - pos) / ramp).min(1.0);
            *out += amplitude * envelope * (step * pos).sin();
        }
    }

    let mut samples: Vec<f32> = mix.into_iter().map(|s| s as f32).collect();
    let peak = samples.iter().fold(0f32, |m, s| m.max(s.abs()));
    if peak > PEAK_LIMIT {
        let scale = PEAK_LIMIT / peak;
        samples.iter_mut().for_each(|s| *s *= scale);
    }
    AudioBuffer {
        sample_rate: sample_rate.max(1),
        channels: vec![samples],
    }
}
