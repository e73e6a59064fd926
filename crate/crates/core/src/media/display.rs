use serde::{Deserialize, Serialize};

use super::AudioBuffer;

/// Min/max envelope of a buffer for drawing a waveform at low resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformBins {
    pub bins: Vec<(f32, f32)>,
    pub samples_per_bin: usize,
}

/// Splits the buffer into contiguous bins of `ceil(frames / bin_count)`
/// frames and records the min and max over all channels in each. The last
/// bin may be short, so fewer than `bin_count` bins can come back.
pub fn waveform_minmax(buffer: &AudioBuffer, bin_count: usize) -> WaveformBins {
    let bin_count = bin_count.max(1);
    let frames = buffer.frames();
    let samples_per_bin = frames.div_ceil(bin_count).max(1);

    let bins = (0..frames)
        .step_by(samples_per_bin)
        .map(|start| {
            let end = (start + samples_per_bin).min(frames);
            buffer
                .channels
                .iter()
                .flat_map(|c| &c[start..end])
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &s| {
                    (lo.min(s), hi.max(s))
                })
        })
        .collect();

    WaveformBins {
        bins,
        samples_per_bin,
    }
}
