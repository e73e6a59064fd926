//! RIFF/WAVE reading and writing.
//!
//! Reads 16/24-bit integer PCM and 32-bit IEEE float, plain or wrapped in
//! `WAVE_FORMAT_EXTENSIBLE`. Integer samples map to floats by `1 / 2^(bits-1)`,
//! so full-scale negative is exactly `-1.0`.

use crate::error::{HarpError, Result};

use super::AudioBuffer;

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_IEEE_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Trailing 14 bytes shared by the KSDATAFORMAT_SUBTYPE_* GUIDs.
const SUBTYPE_GUID_TAIL: [u8; 14] = [
    0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71,
];

/// Sample encoding of a WAV data chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleFormat {
    Int16,
    Int24,
    Float32,
}

impl SampleFormat {
    fn bytes_per_sample(self) -> usize {
        match self {
            SampleFormat::Int16 => 2,
            SampleFormat::Int24 => 3,
            SampleFormat::Float32 => 4,
        }
    }

    fn bits(self) -> u16 {
        self.bytes_per_sample() as u16 * 8
    }

    fn format_tag(self) -> u16 {
        match self {
            SampleFormat::Float32 => FORMAT_IEEE_FLOAT,
            _ => FORMAT_PCM,
        }
    }
}

struct FmtChunk {
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    format: SampleFormat,
}

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(HarpError::decode(format!(
            "wav: fmt chunk is {} bytes, need at least 16",
            body.len()
        )));
    }
    let mut tag = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let block_align = read_u16(body, 12);
    let bits = read_u16(body, 14);

    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) subFormat GUID(16)
        if body.len() < 40 || read_u16(body, 16) < 22 {
            return Err(HarpError::decode("wav: truncated WAVE_FORMAT_EXTENSIBLE header"));
        }
        let guid = &body[24..40];
        if guid[2..] != SUBTYPE_GUID_TAIL {
            return Err(HarpError::decode("wav: unknown extensible sub-format GUID"));
        }
        tag = read_u16(guid, 0);
    }

    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Int16,
        (FORMAT_PCM, 24) => SampleFormat::Int24,
        (FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
        (FORMAT_PCM, _) | (FORMAT_IEEE_FLOAT, _) => {
            return Err(HarpError::decode(format!(
                "wav: unsupported bit depth {bits} for format tag {tag:#06x}"
            )))
        }
        _ => {
            return Err(HarpError::decode(format!(
                "wav: compressed or unknown format tag {tag:#06x}"
            )))
        }
    };
    if channels == 0 || sample_rate == 0 {
        return Err(HarpError::decode(format!(
            "wav: fmt declares {channels} channels at {sample_rate} Hz"
        )));
    }
    if block_align as usize != channels as usize * format.bytes_per_sample() {
        return Err(HarpError::decode(format!(
            "wav: block_align {block_align} inconsistent with {channels} x {bits}-bit"
        )));
    }
    Ok(FmtChunk {
        channels,
        sample_rate,
        block_align,
        format,
    })
}

/// Decodes a WAV file, also reporting the source sample format.
pub fn decode_wav_with_format(bytes: &[u8]) -> Result<(AudioBuffer, SampleFormat)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(HarpError::decode("wav: missing RIFF/WAVE header"));
    }

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        if id == b"data" {
            if size > available {
                return Err(HarpError::decode(format!(
                    "wav: data chunk declares {size} bytes but only {available} remain"
                )));
            }
            data = Some(&bytes[body_start..body_start + size]);
        } else if size > available {
            return Err(HarpError::decode(format!(
                "wav: chunk {:?} declares {size} bytes but only {available} remain",
                String::from_utf8_lossy(id)
            )));
        } else if id == b"fmt " {
            fmt = Some(parse_fmt(&bytes[body_start..body_start + size])?);
        }
        pos = body_start + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| HarpError::decode("wav: no fmt chunk"))?;
    let data = data.ok_or_else(|| HarpError::decode("wav: no data chunk"))?;
    if data.len() % fmt.block_align as usize != 0 {
        return Err(HarpError::decode(format!(
            "wav: data length {} is not a multiple of block_align {}",
            data.len(),
            fmt.block_align
        )));
    }

    let channel_count = fmt.channels as usize;
    let frames = data.len() / fmt.block_align as usize;
    let mut channels = vec![Vec::with_capacity(frames); channel_count];
    let width = fmt.format.bytes_per_sample();
    for (i, raw) in data.chunks_exact(width).enumerate() {
        let value = match fmt.format {
            SampleFormat::Int16 => i16::from_le_bytes([raw[0], raw[1]]) as f32 / 32768.0,
            SampleFormat::Int24 => {
                // sign-extend by placing the 3 bytes in the top of an i32
                let v = i32::from_le_bytes([0, raw[0], raw[1], raw[2]]) >> 8;
                v as f32 / 8_388_608.0
            }
            SampleFormat::Float32 => f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]),
        };
        channels[i % channel_count].push(value);
    }

    let buffer = AudioBuffer::new(fmt.sample_rate, channels).map_err(|e| {
        HarpError::decode(format!("wav: decoded buffer invalid: {}", e.developer_message))
    })?;
    Ok((buffer, fmt.format))
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    decode_wav_with_format(bytes).map(|(buffer, _)| buffer)
}

/// Quantizes one sample: scale, round half away from zero, clamp to full scale.
fn quantize(sample: f32, bits: u32) -> i32 {
    let full = (1i64 << (bits - 1)) as f64;
    let scaled = (sample as f64 * full).round();
    scaled.clamp(-full, full - 1.0) as i32
}

pub fn encode_wav(buffer: &AudioBuffer, format: SampleFormat) -> Result<Vec<u8>> {
    let frames = buffer.frames();
    if frames == 0 {
        return Err(HarpError::encode("wav: cannot encode an empty buffer"));
    }
    let channel_count = buffer.channels.len();
    let width = format.bytes_per_sample();
    let block_align = channel_count * width;
    let data_len = frames * block_align;
    if channel_count > u16::MAX as usize || data_len + 36 > u32::MAX as usize {
        return Err(HarpError::encode(format!(
            "wav: {channel_count} channels x {frames} frames exceeds RIFF limits"
        )));
    }

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.format_tag().to_le_bytes());
    out.extend_from_slice(&(channel_count as u16).to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    for frame in 0..frames {
        for channel in &buffer.channels {
            let sample = channel[frame];
            match format {
                SampleFormat::Int16 => {
                    out.extend_from_slice(&(quantize(sample, 16) as i16).to_le_bytes())
                }
                SampleFormat::Int24 => {
                    out.extend_from_slice(&quantize(sample, 24).to_le_bytes()[..3])
                }
                SampleFormat::Float32 => out.extend_from_slice(&sample.to_le_bytes()),
            }
        }
    }
    Ok(out)
}
