//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reqwest::blocking::{multipart, Client};
use serde_json::{json, Value};

use harp_core::labels::{format_color, layout_label, parse_color, parse_labels, Label, Rgba, Viewport};
use harp_core::media::{
    decode_wav, encode_wav, parse_midi, serialize_midi, ticks_to_seconds, AudioBuffer, Media, MediaKind,
    MidiSequence, Note, SampleFormat, TempoEvent,
};
use harp_core::protocol::{
    validate_control_values, ControlSpec, ControlValue, ControlValues, EndpointAddress, HarpClient, MediaPayload,
    ModelCard, OutputKind, ProcessResult,
};
use harp_core::session::Session;
use harp_core::ErrorCode;
use harp_gateway::{serve_gateway, GatewayConfig, GatewayServer};
use harp_mock::{run_mock_endpoint, BehaviorKind, MockBehavior};

type Criterion = (&'static str, fn() -> Result<String>);

fn main() {
    let criteria: [Criterion; 9] = [
        ("codec round-trips", codec_round_trips),
        ("tempo-map oracle", tempo_map_oracle),
        ("SMF round-trip", smf_round_trip),
        ("end-to-end mock loop", end_to_end),
        ("session properties", session_properties),
        ("control validation", control_validation),
        ("label layout", label_layout),
        ("gateway conformance", gateway_conformance),
        ("CLI exit mapping", cli_exit_mapping),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|panic| {
                let text = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(anyhow::anyhow!("panicked: {text}"))
            });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(err) => {
                failed += 1;
                println!("FAIL  {name}: {err:#}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- codecs

/// Canonical 16-bit PCM WAV, written field by field.
fn pcm16_fixture(rate: u32, channels: u16, interleaved: &[i16]) -> Vec<u8> {
    let data_len = (interleaved.len() * 2) as u32;
    let mut out = Vec::new();
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * channels as u32 * 2).to_le_bytes());
    out.extend_from_slice(&(channels * 2).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in interleaved {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn codec_round_trips() -> Result<String> {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5EED_0001);
    for case in 0..100 {
        let channels = rng.gen_range(1..=4);
        let frames = rng.gen_range(1..=4096);
        let rate = rng.gen_range(1..=192_000);
        let data: Vec<Vec<f32>> = (0..channels)
            .map(|_| (0..frames).map(|_| rng.gen_range(-1.0f32..=1.0)).collect())
            .collect();
        let buffer = AudioBuffer::new(rate, data)?;
        let decoded = decode_wav(&encode_wav(&buffer, SampleFormat::Float32)?)?;
        ensure!(decoded.sample_rate == rate, "case {case}: rate {} != {rate}", decoded.sample_rate);
        ensure!(decoded.channels.len() == channels, "case {case}: channel count");
        for (a, b) in buffer.channels.iter().zip(&decoded.channels) {
            ensure!(a.len() == b.len(), "case {case}: length");
            ensure!(
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
                "case {case}: samples differ"
            );
        }
    }

    let fixtures: Vec<(u32, u16, Vec<i16>)> = vec![
        (44100, 1, vec![0, 1, -1, 32767, -32768, 12345, -12345]),
        (48000, 2, vec![100, -100, 200, -200, 32767, -32768]),
        (8000, 1, (0..1000).map(|i| ((i * 37) % 65536 - 32768) as i16).collect()),
        (22050, 3, vec![1, 2, 3, -4, -5, -6, 7, 8, 9]),
        (96000, 2, vec![0; 64]),
        (11025, 1, vec![-32768]),
    ];
    for (i, (rate, channels, samples)) in fixtures.iter().enumerate() {
        let bytes = pcm16_fixture(*rate, *channels, samples);
        let decoded = decode_wav(&bytes).with_context(|| format!("fixture {i}"))?;
        for (n, &s) in samples.iter().enumerate() {
            let got = decoded.channels[n % *channels as usize][n / *channels as usize];
            ensure!(got == s as f32 / 32768.0, "fixture {i}: sample {n} decoded to {got}");
        }
        let again = encode_wav(&decoded, SampleFormat::Int16)?;
        ensure!(again == bytes, "fixture {i}: re-encoded bytes differ");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "100 random f32 buffers bit-exact, {} 16-bit fixtures byte-exact, {:.2} s",
        fixtures.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- tempo

/// Sums exact integer tick-microseconds per segment and divides once.
fn seconds_oracle(tpq: u16, tempos: &[TempoEvent], tick: u64) -> f64 {
    let mut total: u128 = 0;
    let (mut from, mut tempo) = (0u64, 500_000u128);
    for event in tempos {
        if event.tick >= tick {
            break;
        }
        total += (event.tick - from) as u128 * tempo;
        from = event.tick;
        tempo = event.us_per_quarter as u128;
    }
    total += (tick - from) as u128 * tempo;
    total as f64 / (tpq as f64 * 1e6)
}

fn tempo_map_oracle() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(0x5EED_0002);
    let mut worst = 0f64;
    let mut queries = 0;
    for map in 0..1000 {
        let tpq = rng.gen_range(24..=960u16);
        let changes = rng.gen_range(0..=8);
        let tempos: Vec<TempoEvent> = (0..changes)
            .map(|_| TempoEvent {
                tick: rng.gen_range(0..100_000),
                us_per_quarter: rng.gen_range(100_000..=4_000_000),
            })
            .collect();
        let seq = MidiSequence::new(tpq, tempos, vec![], 0)?;
        ensure!(seq.tempo_events.len() <= 9, "map {map}: {} tempo events", seq.tempo_events.len());
        let mut ticks: Vec<u64> = (0..16).map(|_| rng.gen_range(0..200_000)).collect();
        ticks.extend(seq.tempo_events.iter().map(|t| t.tick));
        for tick in ticks {
            let err = (ticks_to_seconds(&seq, tick) - seconds_oracle(tpq, &seq.tempo_events, tick)).abs();
            worst = worst.max(err);
            queries += 1;
            ensure!(err <= 1e-9, "map {map}, tick {tick}: error {err:e} s");
        }
    }
    Ok(format!("1000 maps, {queries} ticks, max error {worst:.1e} s (tolerance 1e-9)"))
}

// ---------------------------------------------------------------- SMF

fn track(events: &[u8]) -> Vec<u8> {
    let mut out = b"MTrk".to_vec();
    out.extend_from_slice(&(events.len() as u32).to_be_bytes());
    out.extend_from_slice(events);
    out
}

fn smf(format: u16, tpq: u16, chunks: &[Vec<u8>]) -> Vec<u8> {
    let tracks = chunks.iter().filter(|c| c.starts_with(b"MTrk")).count() as u16;
    let mut out = b"MThd".to_vec();
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&format.to_be_bytes());
    out.extend_from_slice(&tracks.to_be_bytes());
    out.extend_from_slice(&tpq.to_be_bytes());
    for chunk in chunks {
        out.extend_from_slice(chunk);
    }
    out
}

fn note(start_tick: u64, end_tick: u64, pitch: u8, velocity: u8, channel: u8) -> Note {
    Note { start_tick, end_tick, pitch, velocity, channel }
}

fn tempo(tick: u64, us_per_quarter: u32) -> TempoEvent {
    TempoEvent { tick, us_per_quarter }
}

struct SmfFixture {
    name: &'static str,
    bytes: Vec<u8>,
    tpq: u16,
    tempos: Vec<TempoEvent>,
    notes: Vec<Note>,
}

fn smf_fixtures() -> Vec<SmfFixture> {
    const END: [u8; 4] = [0x00, 0xFF, 0x2F, 0x00];
    let with_end = |events: &[u8]| [events, &END].concat();
    vec![
        SmfFixture {
            name: "running status",
            bytes: smf(0, 96, &[track(&with_end(&[
                0x00, 0x90, 0x3C, 0x40,
                0x60, 0x3E, 0x50,
                0x60, 0x80, 0x3C, 0x00,
                0x00, 0x3E, 0x00,
            ]))]),
            tpq: 96,
            tempos: vec![tempo(0, 500_000)],
            notes: vec![note(0, 192, 60, 64, 0), note(96, 192, 62, 80, 0)],
        },
        SmfFixture {
            name: "velocity-0 offs",
            bytes: smf(0, 480, &[track(&with_end(&[
                0x00, 0xFF, 0x51, 0x03, 0x09, 0x27, 0xC0,
                0x00, 0x91, 0x40, 0x64,
                0x83, 0x60, 0x91, 0x40, 0x00,
                0x00, 0x91, 0x43, 0x64,
                0x83, 0x60, 0x91, 0x43, 0x00,
            ]))]),
            tpq: 480,
            tempos: vec![tempo(0, 600_000)],
            notes: vec![note(0, 480, 64, 100, 1), note(480, 960, 67, 100, 1)],
        },
        SmfFixture {
            name: "overlapping notes",
            bytes: smf(0, 100, &[track(&with_end(&[
                0x00, 0x90, 0x3C, 0x64,
                0x32, 0x90, 0x40, 0x64,
                0x32, 0x90, 0x3C, 0x50,
                0x32, 0x80, 0x3C, 0x00,
                0x32, 0x80, 0x40, 0x00,
                0x32, 0x80, 0x3C, 0x00,
            ]))]),
            tpq: 100,
            tempos: vec![tempo(0, 500_000)],
            notes: vec![note(0, 150, 60, 100, 0), note(50, 200, 64, 100, 0), note(100, 250, 60, 80, 0)],
        },
        SmfFixture {
            name: "format-1 multitrack",
            bytes: smf(1, 240, &[
                track(&with_end(&[
                    0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20,
                    0x81, 0x70, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40,
                ])),
                track(&with_end(&[0x00, 0x90, 0x30, 0x64, 0x83, 0x60, 0x80, 0x30, 0x40])),
                track(&with_end(&[0x81, 0x70, 0x92, 0x37, 0x50, 0x81, 0x70, 0x82, 0x37, 0x00])),
            ]),
            tpq: 240,
            tempos: vec![tempo(0, 500_000), tempo(240, 1_000_000)],
            notes: vec![note(0, 480, 48, 100, 0), note(240, 480, 55, 80, 2)],
        },
        SmfFixture {
            name: "sysex, text, program change, bend, open note",
            bytes: smf(0, 96, &[track(&[
                0x00, 0xF0, 0x03, 0x7E, 0x7F, 0xF7,
                0x00, 0xFF, 0x01, 0x04, b'h', b'a', b'r', b'p',
                0x00, 0xC0, 0x05,
                0x00, 0x90, 0x45, 0x7F,
                0x30, 0xE0, 0x00, 0x40,
                0x30, 0xFF, 0x2F, 0x00,
            ])]),
            tpq: 96,
            tempos: vec![tempo(0, 500_000)],
            notes: vec![note(0, 96, 69, 127, 0)],
        },
        SmfFixture {
            name: "foreign chunk, duplicate tempo",
            bytes: smf(0, 480, &[
                [b"XFIH".as_slice(), &4u32.to_be_bytes(), b"abcd"].concat(),
                track(&with_end(&[
                    0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20,
                    0x00, 0xFF, 0x51, 0x03, 0x06, 0x1A, 0x80,
                    0x00, 0x90, 0x3C, 0x40,
                    0x83, 0x60, 0x3C, 0x00,
                ])),
            ]),
            tpq: 480,
            tempos: vec![tempo(0, 400_000)],
            notes: vec![note(0, 480, 60, 64, 0)],
        },
    ]
}

/// Notes whose ends never decrease within a (pitch, channel) lane; only
/// those survive first-in first-out note-off pairing.
fn random_sequence(rng: &mut StdRng) -> Result<MidiSequence> {
    let tpq = rng.gen_range(1..=960u16);
    let tempos: Vec<TempoEvent> = (0..rng.gen_range(0..=8))
        .map(|_| tempo(rng.gen_range(0..20_000), rng.gen_range(1..=0xFF_FFFF)))
        .collect();
    let mut lanes: BTreeMap<(u8, u8), Vec<(u64, u64, u8)>> = BTreeMap::new();
    for _ in 0..rng.gen_range(0..=200) {
        let start = rng.gen_range(0..20_000);
        let pitch = rng.gen_range(0..=127);
        let channel = rng.gen_range(0..=15);
        let lane = lanes.entry((pitch, channel)).or_default();
        lane.push((start, start + rng.gen_range(1..2000), rng.gen_range(1..=127)));
    }
    let mut notes = Vec::new();
    for ((pitch, channel), mut lane) in lanes {
        lane.sort();
        let mut last_end = 0;
        for (start, end, velocity) in lane {
            last_end = end.max(last_end);
            notes.push(note(start, last_end, pitch, velocity, channel));
        }
    }
    Ok(MidiSequence::new(tpq, tempos, notes, rng.gen_range(0..30_000))?)
}

fn sorted(mut notes: Vec<Note>) -> Vec<Note> {
    notes.sort();
    notes
}

fn smf_round_trip() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(0x5EED_0003);
    let mut total_notes = 0;
    for case in 0..300 {
        let seq = random_sequence(&mut rng)?;
        total_notes += seq.notes.len();
        let parsed = parse_midi(&serialize_midi(&seq)?).with_context(|| format!("sequence {case}"))?;
        ensure!(parsed.ticks_per_quarter == seq.ticks_per_quarter, "sequence {case}: tpq");
        ensure!(parsed.tempo_events == seq.tempo_events, "sequence {case}: tempo events");
        ensure!(sorted(parsed.notes) == sorted(seq.notes), "sequence {case}: note multiset");
    }

    let fixtures = smf_fixtures();
    for f in &fixtures {
        let parsed = parse_midi(&f.bytes).with_context(|| f.name)?;
        ensure!(parsed.ticks_per_quarter == f.tpq, "{}: tpq {}", f.name, parsed.ticks_per_quarter);
        ensure!(parsed.tempo_events == f.tempos, "{}: tempo map {:?}", f.name, parsed.tempo_events);
        ensure!(sorted(parsed.notes.clone()) == sorted(f.notes.clone()), "{}: notes {:?}", f.name, parsed.notes);
        let again = parse_midi(&serialize_midi(&parsed)?)?;
        ensure!(again.ticks_per_quarter == parsed.ticks_per_quarter, "{}: tpq after round trip", f.name);
        ensure!(again.tempo_events == parsed.tempo_events, "{}: tempo after round trip", f.name);
        ensure!(sorted(again.notes) == sorted(parsed.notes), "{}: notes after round trip", f.name);
    }
    let multitrack = parse_midi(&fixtures[3].bytes)?;
    let end = ticks_to_seconds(&multitrack, 480);
    ensure!((end - 1.5).abs() < 1e-12, "format-1 tempo map gives {end} s at tick 480");
    Ok(format!(
        "300 random sequences ({total_notes} notes, up to 200 each) and {} handcrafted fixtures preserved",
        fixtures.len()
    ))
}

// ---------------------------------------------------------------- end to end

/// Upward crossings of the frame RMS through `threshold`, scanning full
/// 512-sample frames every 256 samples. Returns frame start samples.
fn onset_oracle(mono: &[f32], threshold: f64) -> Vec<usize> {
    let rms: Vec<f64> = (0..)
        .map(|i| i * 256)
        .take_while(|start| start + 512 <= mono.len())
        .map(|start| {
            let sum: f64 = mono[start..start + 512].iter().map(|&x| (x as f64).powi(2)).sum();
            (sum / 512.0).sqrt()
        })
        .collect();
    (0..rms.len())
        .filter(|&i| rms[i] >= threshold && (i == 0 || rms[i - 1] < threshold))
        .map(|i| i * 256)
        .collect()
}

fn end_to_end() -> Result<String> {
    let start = Instant::now();
    let client = HarpClient::new();
    let budget = Duration::from_secs(10);
    let mut rng = StdRng::seed_from_u64(0x5EED_0004);

    // gain
    let gain = run_mock_endpoint(MockBehavior::new(BehaviorKind::Gain), 0)?;
    let noise: Vec<Vec<f32>> = (0..2).map(|_| (0..22050).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()).collect();
    let input = AudioBuffer::new(44100, noise)?;
    let wav = encode_wav(&input, SampleFormat::Float32)?;
    let mut session = Session::new();
    session.load_media(&wav, "noise.wav")?;
    let given: ControlValues = [("gain".to_string(), ControlValue::Number(0.5))].into();
    let result = client.process(&gain.endpoint(), &wav, MediaKind::Audio, &given, budget, |_| {})?;
    session.apply_result(&result)?;
    let Some(Media::Audio(output)) = &session.current().media else { bail!("gain returned no audio") };
    let mut worst = 0f32;
    for (a, b) in input.channels.iter().zip(&output.channels) {
        ensure!(a.len() == b.len(), "gain output length {} != {}", b.len(), a.len());
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x * 0.5 - y).abs());
        }
    }
    ensure!(worst <= 1e-4, "gain error {worst}");

    // transpose
    let transpose = run_mock_endpoint(MockBehavior::new(BehaviorKind::Transpose), 0)?;
    let notes: Vec<Note> = (0..128u64)
        .map(|i| note(i * 120, i * 120 + 100, i as u8, rng.gen_range(1..=127), rng.gen_range(0..=15)))
        .collect();
    let seq = MidiSequence::new(480, vec![tempo(0, 400_000)], notes.clone(), 0)?;
    let given: ControlValues = [("semitones".to_string(), ControlValue::Number(2.0))].into();
    let result = client.process(&transpose.endpoint(), &serialize_midi(&seq)?, MediaKind::Midi, &given, budget, |_| {})?;
    let payload = result.media.context("transpose returned no media")?;
    let out = parse_midi(&payload.bytes)?;
    let expected: Vec<Note> = notes.iter().map(|n| Note { pitch: (n.pitch + 2).min(127), ..*n }).collect();
    ensure!(sorted(out.notes) == sorted(expected), "transposed notes differ");

    // onsets
    let onsets = run_mock_endpoint(MockBehavior::new(BehaviorKind::Onsets), 0)?;
    let mut signal = Vec::new();
    for (gap, len, level) in [(3000, 5000, 0.6f32), (7000, 3000, 0.3), (4000, 9000, 0.9), (6000, 1000, 0.05), (2000, 4000, 0.2)] {
        signal.extend(std::iter::repeat(0.0).take(gap));
        signal.extend((0..len).map(|i| level * (i as f32 * 0.07).sin()));
    }
    let threshold = 0.1;
    let buffer = AudioBuffer::new(44100, vec![signal.clone()])?;
    let given: ControlValues = [("threshold".to_string(), ControlValue::Number(threshold))].into();
    let wav = encode_wav(&buffer, SampleFormat::Float32)?;
    let result = client.process(&onsets.endpoint(), &wav, MediaKind::Audio, &given, budget, |_| {})?;
    ensure!(result.media.is_none(), "onsets returned media");
    let frames: Vec<usize> = result.labels.iter().map(|l| (l.t * 44100.0).round() as usize).collect();
    let oracle = onset_oracle(&signal, threshold);
    ensure!(!oracle.is_empty(), "oracle found no onsets");
    ensure!(frames == oracle, "onset frames {frames:?} != oracle {oracle:?}");
    for (label, frame) in result.labels.iter().zip(&oracle) {
        ensure!(label.t == *frame as f64 / 44100.0, "label time {} not frame {frame}", label.t);
    }

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "gain max error {worst:.1e}, 128 transposed notes exact, {} onset frames match oracle, {:.2} s",
        oracle.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- session

fn audio_result(value: f32) -> Result<ProcessResult> {
    let buffer = AudioBuffer::new(8000, vec![vec![value; 16]])?;
    Ok(ProcessResult {
        media: Some(MediaPayload { kind: MediaKind::Audio, bytes: encode_wav(&buffer, SampleFormat::Float32)? }),
        labels: vec![Label::point(value as f64, "v")],
    })
}

#[derive(Debug, PartialEq)]
struct Snapshot {
    hash: String,
    undo: usize,
    redo: usize,
    endpoint: Option<String>,
    status: String,
    info: String,
}

fn snapshot(s: &Session) -> Snapshot {
    Snapshot {
        hash: s.current().content_hash(),
        undo: s.undo_depth(),
        redo: s.redo_depth(),
        endpoint: s.endpoint().map(|b| b.address.to_string()),
        status: s.status_line().to_string(),
        info: s.info_line().to_string(),
    }
}

fn loaded_session() -> Result<Session> {
    let mut s = Session::new();
    let wav = encode_wav(&AudioBuffer::new(8000, vec![vec![0.125; 16]])?, SampleFormat::Float32)?;
    s.load_media(&wav, "start.wav")?;
    Ok(s)
}

fn session_properties() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(0x5EED_0005);
    for trial in 0..50 {
        let k = rng.gen_range(1..=32);
        let mut s = loaded_session()?;
        let original = s.current().content_hash();
        for _ in 0..k {
            s.apply_result(&audio_result(rng.gen_range(-1.0..1.0))?)?;
        }
        let top = snapshot(&s);
        ensure!(s.undo(), "trial {trial}: undo failed");
        ensure!(s.redo(), "trial {trial}: redo failed");
        ensure!(snapshot(&s).hash == top.hash && s.undo_depth() == top.undo, "trial {trial}: redo after undo changed the document");
        for i in 0..k {
            ensure!(s.undo(), "trial {trial}: undo {i} of {k} failed");
        }
        ensure!(s.current().content_hash() == original, "trial {trial}: k={k} undos did not restore the original");
    }

    let mut s = loaded_session()?;
    let mut hashes = vec![s.current().content_hash()];
    for i in 0..40 {
        s.apply_result(&audio_result(i as f32 / 64.0)?)?;
        hashes.push(s.current().content_hash());
    }
    ensure!(s.undo_depth() == 32, "after 40 applies undo depth is {}", s.undo_depth());
    for _ in 0..32 {
        ensure!(s.undo(), "undo within the cap failed");
    }
    ensure!(!s.can_undo(), "history deeper than 32");
    ensure!(s.current().content_hash() == hashes[8], "oldest kept state is not the 8th apply");

    // injected failures leave everything as it was
    let mut s = loaded_session()?;
    s.apply_result(&audio_result(0.5)?)?;
    s.undo();
    let before = snapshot(&s);
    let truncated = {
        let mut wav = encode_wav(&AudioBuffer::new(8000, vec![vec![0.5; 64]])?, SampleFormat::Int16)?;
        wav.truncate(60);
        wav
    };
    ensure!(s.load_media(&truncated, "cut.wav").is_err(), "truncated WAV loaded");
    ensure!(s.load_media(b"MThd\x00\x00\x00\x06", "cut.mid").is_err(), "truncated MIDI loaded");
    ensure!(s.load_media(b"plain text", "notes.txt").is_err(), "text loaded");
    let bad = ProcessResult {
        media: Some(MediaPayload { kind: MediaKind::Audio, bytes: b"RIFF....WAVE".to_vec() }),
        labels: vec![],
    };
    ensure!(s.apply_result(&bad).is_err(), "corrupt result applied");
    let unreachable = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        EndpointAddress::parse(&format!("http://{}", listener.local_addr()?))?
    };
    ensure!(s.set_endpoint(&HarpClient::new(), &unreachable).is_err(), "unreachable endpoint selected");
    ensure!(snapshot(&s) == before, "failed operations changed the session");
    ensure!(s.can_redo(), "redo stack lost after failures");

    Ok("50 random k<=32 apply/undo runs, redo-after-undo identity, cap 32 after 40 applies, 5 injected failures atomic".to_string())
}

// ---------------------------------------------------------------- controls

fn table_card() -> ModelCard {
    ModelCard {
        name: "Table".into(),
        description: String::new(),
        author: String::new(),
        tags: vec![],
        media_in: MediaKind::Audio,
        media_out: OutputKind::Audio,
        controls: vec![
            ControlSpec::Slider { label: "gain".into(), min: 0.0, max: 2.0, step: 0.01, default: 1.0 },
            ControlSpec::NumberBox { label: "seed".into(), default: 42.0 },
            ControlSpec::TextBox { label: "prompt".into(), default: "warm".into() },
            ControlSpec::Dropdown { label: "mode".into(), options: vec!["fast".into(), "slow".into()], default: "slow".into() },
            ControlSpec::Toggle { label: "normalize".into(), default: true },
        ],
    }
}

fn control_validation() -> Result<String> {
    let card = table_card();
    let n = |x: f64| ControlValue::Number(x);
    let t = |x: &str| ControlValue::Text(x.to_string());
    let b = ControlValue::Bool;

    let defaults = validate_control_values(&card, &ControlValues::new())?;
    let expected: ControlValues = [
        ("gain".to_string(), n(1.0)),
        ("seed".to_string(), n(42.0)),
        ("prompt".to_string(), t("warm")),
        ("mode".to_string(), t("slow")),
        ("normalize".to_string(), b(true)),
    ]
    .into();
    ensure!(defaults == expected, "defaults {defaults:?}");

    let accept: Vec<(&str, ControlValue)> = vec![
        ("gain", n(0.0)),
        ("gain", n(0.5)),
        ("gain", n(2.0)),
        ("seed", n(-1e9)),
        ("seed", n(0.0)),
        ("prompt", t("")),
        ("prompt", t("bright and wide")),
        ("mode", t("fast")),
        ("normalize", b(false)),
    ];
    for (label, value) in &accept {
        let given: ControlValues = [(label.to_string(), value.clone())].into();
        let out = validate_control_values(&card, &given).with_context(|| format!("{label}={value:?}"))?;
        ensure!(out.get(*label) == Some(value), "{label} not kept");
        ensure!(out.len() == 5, "{label}: defaults not filled");
    }

    let reject: Vec<(&str, ControlValue)> = vec![
        ("gain", n(2.0001)),
        ("gain", n(-0.01)),
        ("gain", n(9.9)),
        ("gain", t("loud")),
        ("gain", b(true)),
        ("seed", t("x")),
        ("seed", b(false)),
        ("prompt", n(5.0)),
        ("prompt", b(true)),
        ("mode", t("turbo")),
        ("mode", n(1.0)),
        ("normalize", t("yes")),
        ("normalize", n(1.0)),
        ("volume", n(1.0)),
        ("Gain", n(1.0)),
    ];
    for (label, value) in &reject {
        let given: ControlValues = [(label.to_string(), value.clone())].into();
        match validate_control_values(&card, &given) {
            Ok(_) => bail!("{label}={value:?} accepted"),
            Err(e) => {
                ensure!(e.code == ErrorCode::E130_ControlValidation, "{label}: code {:?}", e.code);
                ensure!(e.user_message.contains(label), "{label}: message {:?}", e.user_message);
            }
        }
    }
    let range = validate_control_values(&card, &[("gain".to_string(), n(9.9))].into()).unwrap_err();
    ensure!(range.user_message == "gain out of range [0,2]", "message {:?}", range.user_message);

    let mut rng = StdRng::seed_from_u64(0x5EED_0006);
    let mut accepted = 0;
    for pair in 0..500 {
        let card = random_card(&mut rng)?;
        let given = random_values(&mut rng, &card);
        match validate_control_values(&card, &given) {
            Ok(once) => {
                accepted += 1;
                ensure!(once.len() == card.controls.len(), "pair {pair}: incomplete map");
                let twice = validate_control_values(&card, &once).with_context(|| format!("pair {pair}"))?;
                ensure!(twice == once, "pair {pair}: not idempotent");
            }
            Err(e) => ensure!(e.code == ErrorCode::E130_ControlValidation, "pair {pair}: code {:?}", e.code),
        }
    }
    ensure!(accepted >= 100, "only {accepted} of 500 random pairs were valid");
    Ok(format!(
        "defaults, {} accepts, {} E130 rejects; 500 random pairs ({accepted} valid) idempotent",
        accept.len(),
        reject.len()
    ))
}

fn random_card(rng: &mut StdRng) -> Result<ModelCard> {
    let controls = (0..rng.gen_range(0..6))
        .map(|i| {
            let label = format!("c{i}");
            match rng.gen_range(0..5) {
                0 => {
                    let min = rng.gen_range(-100.0..100.0);
                    let max = min + rng.gen_range(0.01..50.0);
                    let default = rng.gen_range(min..=max);
                    ControlSpec::Slider { label, min, max, step: 0.01, default }
                }
                1 => ControlSpec::NumberBox { label, default: rng.gen_range(-1e3..1e3) },
                2 => ControlSpec::TextBox { label, default: format!("d{}", rng.gen::<u8>()) },
                3 => {
                    let options: Vec<String> = (0..rng.gen_range(1..4)).map(|k| format!("o{k}")).collect();
                    let default = options[rng.gen_range(0..options.len())].clone();
                    ControlSpec::Dropdown { label, options, default }
                }
                _ => ControlSpec::Toggle { label, default: rng.gen() },
            }
        })
        .collect();
    let card = ModelCard {
        name: "random".into(),
        description: String::new(),
        author: String::new(),
        tags: vec![],
        media_in: MediaKind::Audio,
        media_out: OutputKind::Labels,
        controls,
    };
    card.validate()?;
    Ok(card)
}

/// Mostly well-typed values, some out of range or of the wrong type.
fn random_values(rng: &mut StdRng, card: &ModelCard) -> ControlValues {
    let mut values = ControlValues::new();
    for spec in &card.controls {
        if rng.gen_bool(0.3) {
            continue;
        }
        let value = match (spec, rng.gen_range(0..10)) {
            (_, 0) => ControlValue::Text("wrong".into()),
            (ControlSpec::Slider { min, max, .. }, k) => ControlValue::Number(if k == 1 {
                max + 1.0
            } else {
                rng.gen_range(*min..=*max)
            }),
            (ControlSpec::NumberBox { .. }, _) => ControlValue::Number(rng.gen_range(-1e6..1e6)),
            (ControlSpec::TextBox { .. }, _) => ControlValue::Text(format!("t{}", rng.gen::<u16>())),
            (ControlSpec::Dropdown { options, .. }, k) => ControlValue::Text(if k == 1 {
                "missing".into()
            } else {
                options[rng.gen_range(0..options.len())].clone()
            }),
            (ControlSpec::Toggle { .. }, _) => ControlValue::Bool(rng.gen()),
        };
        values.insert(spec.label().to_string(), value);
    }
    if rng.gen_bool(0.05) {
        values.insert("stray".into(), ControlValue::Bool(true));
    }
    values
}

// ---------------------------------------------------------------- labels

fn label_layout() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(0x5EED_0007);
    let mut worst = 0f64;
    let mut visibility_checks = 0;
    for i in 0..10_000 {
        let start = rng.gen_range(-100.0..100.0);
        let span = rng.gen_range(0.001..500.0);
        let width = rng.gen_range(1..8000);
        let vp = if i % 2 == 0 {
            Viewport::waveform(start, span, width, 300)?
        } else {
            Viewport::pianoroll(start, span, width, 300, 21, 108)?
        };
        let t = rng.gen_range(0.0..1000.0);
        let delta = rng.gen_range(-100.0..100.0f64).max(-t);
        let a = layout_label(&Label::point(t, "a"), &vp);
        let b = layout_label(&Label::point(t + delta, "b"), &vp);
        let err = ((b.x_px - a.x_px) / width as f64 - delta / span).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-9, "affine error {err:e} at t={t}, delta={delta}");
        ensure!(layout_label(&Label::point(t, "c"), &vp).x_px == a.x_px, "equal t gave different x");

        let duration = if rng.gen_bool(0.3) { None } else { Some(rng.gen_range(0.0..200.0)) };
        let label = Label { duration, ..Label::point(rng.gen_range(0.0..1000.0), "v") };
        let end = label.t + duration.unwrap_or(0.0);
        let overlaps = label.t.max(start) <= end.min(start + span);
        ensure!(layout_label(&label, &vp).visible == overlaps, "visibility wrong for {label:?} in {vp:?}");
        visibility_checks += 1;
    }

    let mut rgbs: Vec<(u8, u8, u8)> = vec![(0, 0, 0), (255, 255, 255), (255, 0, 0), (0, 255, 0), (0, 0, 255), (0x12, 0xAB, 0xEF)];
    rgbs.extend((0..58).map(|_| (rng.gen(), rng.gen(), rng.gen())));
    let mut colors = 0;
    for &(r, g, b) in &rgbs {
        for a in 0..=255u8 {
            let color = Rgba { r, g, b, a };
            let text = format_color(color);
            ensure!(parse_color(&text)? == color, "{text} did not round-trip");
            ensure!(text.len() == if a == 255 { 7 } else { 9 }, "{text} has the wrong length");
            let long = format!("#{r:02x}{g:02x}{b:02x}{a:02x}");
            ensure!(format_color(parse_color(&long)?) == text, "{long} formats inconsistently");
            colors += 1;
        }
    }

    let fixtures: Value = serde_json::from_str(&std::fs::read_to_string(fixture_path("label_layout.json"))?)?;
    let cases = fixtures["cases"].as_array().context("layout fixture cases")?;
    for case in cases {
        let v = &fixtures["viewports"][case["viewport"].as_str().context("viewport name")?];
        let f = |k: &str| v[k].as_f64().unwrap_or_default();
        let vp = match v["mode"].as_str() {
            Some("waveform") => Viewport::waveform(f("start_s"), f("duration_s"), f("width_px") as u32, f("height_px") as u32)?,
            _ => Viewport::pianoroll(
                f("start_s"),
                f("duration_s"),
                f("width_px") as u32,
                f("height_px") as u32,
                f("pitch_min") as u8,
                f("pitch_max") as u8,
            )?,
        };
        let label = parse_labels(&json!([case["label"]]))?.remove(0);
        let got = layout_label(&label, &vp);
        let want = &case["expected"];
        for (key, value) in [("x_px", got.x_px), ("width_px", got.width_px), ("y_px", got.y_px)] {
            ensure!((value - want[key].as_f64().unwrap_or(f64::NAN)).abs() < 1e-9, "fixture {case}: {key} = {value}");
        }
        ensure!(Some(got.visible) == want["visible"].as_bool(), "fixture {case}: visible");
    }

    Ok(format!(
        "10000 affine samples (max {worst:.1e}), {visibility_checks} visibility checks, {colors} colors ({} RGB x 256 alpha), {} fixtures",
        rgbs.len(),
        cases.len()
    ))
}

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

// ---------------------------------------------------------------- gateway

struct Api {
    http: Client,
    base: String,
}

impl Api {
    fn new(base: String) -> Self {
        Api { http: Client::builder().timeout(Duration::from_secs(30)).build().unwrap(), base }
    }

    fn get(&self, path: &str) -> Result<(u16, Value)> {
        let r = self.http.get(format!("{}{path}", self.base)).send()?;
        Ok((r.status().as_u16(), r.json().unwrap_or(Value::Null)))
    }

    fn get_bytes(&self, path: &str) -> Result<(u16, Vec<u8>)> {
        let r = self.http.get(format!("{}{path}", self.base)).send()?;
        Ok((r.status().as_u16(), r.bytes()?.to_vec()))
    }

    fn post(&self, path: &str, body: Value) -> Result<(u16, Value)> {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send()?;
        Ok((r.status().as_u16(), r.json().unwrap_or(Value::Null)))
    }

    fn load(&self, name: &str, bytes: Vec<u8>) -> Result<(u16, Value)> {
        let part = multipart::Part::bytes(bytes).file_name(name.to_string());
        let r = self
            .http
            .post(format!("{}/api/load", self.base))
            .multipart(multipart::Form::new().part("file", part))
            .send()?;
        Ok((r.status().as_u16(), r.json().unwrap_or(Value::Null)))
    }

    fn hash(&self) -> Result<String> {
        Ok(self.get("/api/debug")?.1["content_hash"].as_str().context("content_hash")?.to_string())
    }

    fn wait_terminal(&self) -> Result<Value> {
        let start = Instant::now();
        let mut seen = Vec::new();
        loop {
            let (_, p) = self.get("/api/progress")?;
            let state = p["state"].as_str().unwrap_or_default().to_string();
            if seen.last() != Some(&state) {
                seen.push(state.clone());
            }
            if ["complete", "error", "cancelled"].contains(&state.as_str()) {
                return Ok(p);
            }
            ensure!(start.elapsed() < Duration::from_secs(20), "job stuck; states {seen:?}");
            std::thread::sleep(Duration::from_millis(10));
        }
    }
}

fn gateway() -> Result<GatewayServer> {
    Ok(serve_gateway(GatewayConfig { port: 0, ..GatewayConfig::default() })?)
}

fn expect(got: (u16, Value), status: u16, what: &str) -> Result<Value> {
    ensure!(got.0 == status, "{what}: status {} (wanted {status}), body {}", got.0, got.1);
    Ok(got.1)
}

fn gateway_conformance() -> Result<String> {
    let gain = run_mock_endpoint(MockBehavior::new(BehaviorKind::Gain), 0)?;
    let server = gateway()?;
    let api = Api::new(server.url());

    // scripted loop
    let state = expect(api.get("/api/state")?, 200, "fresh state")?;
    ensure!(state["media_kind"].is_null() && state["endpoint"].is_null(), "fresh state {state}");
    expect(api.post("/api/process", json!({"controls": {}}))?, 409, "process without media")?;
    expect(api.get("/api/media")?, 409, "media without media")?;

    let samples: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.013).sin() * 0.7).collect();
    let input = AudioBuffer::new(16000, vec![samples])?;
    let wav = encode_wav(&input, SampleFormat::Int16)?;
    let state = expect(api.load("tone.wav", wav.clone())?, 200, "load")?;
    ensure!(state["media_kind"] == "audio" && state["can_undo"] == true, "after load {state}");
    let original = api.hash()?;
    expect(api.load("bad.wav", b"RIFF junk".to_vec())?, 422, "corrupt load")?;
    ensure!(api.hash()? == original, "corrupt load changed the document");

    let card = expect(api.post("/api/endpoint", json!({"url": gain.url()}))?, 200, "endpoint")?;
    ensure!(card["schema_version"] == 2 && card["card"]["name"] == "Gain", "card {card}");
    let bad = expect(api.post("/api/process", json!({"controls": {"gain": 9.9}}))?, 422, "out-of-range gain")?;
    ensure!(bad["code"] == "E130_ControlValidation", "code {bad}");

    expect(api.post("/api/process", json!({"controls": {"gain": 0.5}}))?, 202, "process")?;
    let done = api.wait_terminal()?;
    ensure!(done["state"] == "complete" && done["progress"] == 1.0, "progress {done}");
    let (code, bytes) = api.get_bytes("/api/media")?;
    ensure!(code == 200, "media status {code}");
    let processed = decode_wav(&bytes)?;
    let worst = input.channels[0]
        .iter()
        .zip(&processed.channels[0])
        .map(|(a, b)| (a * 0.5 - b).abs())
        .fold(0f32, f32::max);
    ensure!(worst <= 1e-4, "processed media error {worst}");
    let processed_hash = api.hash()?;
    let (code, wave) = api.get("/api/waveform?bins=64")?;
    ensure!(code == 200 && wave["bins"].as_array().map(Vec::len) == Some(64), "waveform {code}");
    expect(api.get("/api/notes")?, 409, "notes for audio")?;

    let state = expect(api.post("/api/undo", json!({}))?, 200, "undo")?;
    ensure!(state["can_redo"] == true, "undo state {state}");
    ensure!(api.hash()? == original, "undo did not restore the loaded document");
    let state = expect(api.post("/api/redo", json!({}))?, 200, "redo")?;
    ensure!(state["can_redo"] == false, "redo state {state}");
    ensure!(api.hash()? == processed_hash, "redo did not restore the processed document");
    expect(api.post("/api/cancel", json!({}))?, 200, "idle cancel")?;

    let midi = serialize_midi(&MidiSequence::new(480, vec![], vec![note(0, 480, 69, 100, 0)], 0)?)?;
    expect(api.load("a.mid", midi)?, 200, "load midi")?;
    expect(api.get("/api/waveform")?, 409, "waveform for midi")?;
    let notes = expect(api.get("/api/notes")?, 200, "notes")?;
    ensure!(notes["notes"][0]["pitch"] == 69, "notes {notes}");
    let (code, preview) = api.get_bytes("/api/preview")?;
    ensure!(code == 200 && decode_wav(&preview)?.sample_rate == 44100, "preview {code}");

    // one job at a time
    let slow = run_mock_endpoint(MockBehavior::new(BehaviorKind::Gain).with_delay(Duration::from_millis(800)), 0)?;
    let busy_server = gateway()?;
    let busy = Api::new(busy_server.url());
    busy.load("tone.wav", wav.clone())?;
    busy.post("/api/endpoint", json!({"url": slow.url()}))?;
    expect(busy.post("/api/process", json!({"controls": {}}))?, 202, "first process")?;
    let second = expect(busy.post("/api/process", json!({"controls": {}}))?, 409, "second process")?;
    ensure!(second["code"] == "busy", "second process {second}");
    ensure!(busy.wait_terminal()?["state"] == "complete", "first job did not complete");

    // storm
    let storm_mock = run_mock_endpoint(MockBehavior::new(BehaviorKind::Gain).with_delay(Duration::from_millis(20)), 0)?;
    let storm_server = gateway()?;
    let storm = Api::new(storm_server.url());
    storm.post("/api/endpoint", json!({"url": storm_mock.url()}))?;
    let base = storm_server.url();
    let threads: Vec<_> = (0..10)
        .map(|t| {
            let base = base.clone();
            let wav = wav.clone();
            std::thread::spawn(move || -> Result<Vec<u16>> {
                let api = Api::new(base);
                let mut codes = Vec::new();
                for i in 0..5 {
                    let (code, _) = match (t * 5 + i) % 8 {
                        0 => api.load("tone.wav", wav.clone())?,
                        1 => api.post("/api/undo", json!({}))?,
                        2 => api.post("/api/redo", json!({}))?,
                        3 => api.post("/api/process", json!({"controls": {"gain": 0.25}}))?,
                        4 => api.get("/api/state")?,
                        5 => api.post("/api/cancel", json!({}))?,
                        6 => api.get("/api/progress")?,
                        _ => api.get("/api/waveform?bins=10")?,
                    };
                    codes.push(code);
                }
                Ok(codes)
            })
        })
        .collect();
    let mut calls = 0;
    for t in threads {
        let codes = t.join().map_err(|_| anyhow::anyhow!("storm thread panicked"))??;
        calls += codes.len();
        ensure!(codes.iter().all(|c| [200, 202, 409, 422].contains(c)), "unexpected statuses {codes:?}");
    }
    let start = Instant::now();
    while storm.get("/api/debug")?.1["busy"] == true {
        ensure!(start.elapsed() < Duration::from_secs(20), "storm job never finished");
        std::thread::sleep(Duration::from_millis(10));
    }
    let state = storm.get("/api/state")?.1;
    let debug = storm.get("/api/debug")?.1;
    let undo = debug["undo_depth"].as_u64().context("undo_depth")?;
    let redo = debug["redo_depth"].as_u64().context("redo_depth")?;
    ensure!(state["can_undo"] == (undo > 0) && state["can_redo"] == (redo > 0), "state disagrees with history");
    ensure!(undo <= 32 && redo <= 32, "history depths {undo}/{redo}");
    for _ in 0..undo {
        expect(storm.post("/api/undo", json!({}))?, 200, "post-storm undo")?;
    }
    ensure!(storm.get("/api/state")?.1["can_undo"] == false, "undo stack not exhausted after {undo} undos");

    Ok(format!("13 routes scripted against the gain mock, 409 on concurrent process, {calls}-call storm kept history consistent"))
}

fn cli_exit_mapping() -> Result<String> {
    for code in ErrorCode::ALL {
        let exit = harp_cli::exit_code_for(code);
        let want = match code.as_str().as_bytes()[2] {
            b'0' => 4,
            b'3' => 3,
            b'4' | b'5' => 5,
            _ => exit,
        };
        ensure!([3, 4, 5].contains(&exit) && exit == want, "{code:?} maps to {exit}");
    }
    Ok(format!("{} error codes each map to one exit class", ErrorCode::ALL.len()))
}
