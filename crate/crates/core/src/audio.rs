//! WAV decoding/encoding and basic sample-stream plumbing.
//!
//! Only the RIFF/WAVE subset that the rest of the crate produces is accepted:
//! PCM format code 1, 16-bit signed little-endian, one or two channels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Canonical sample rate every clip is resampled to before feature extraction.
pub const CANONICAL_RATE: u32 = 16_000;

/// Mono PCM samples in `[-1, 1]` at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {s} is outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copies out the half-open sample range `[start, end)` as a new clip.
    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Equal-length frames cut from a clip at a fixed hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub frames: Vec<Vec<f64>>,
    pub frame_len: usize,
    pub hop: usize,
}

impl FrameStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a 16-bit PCM RIFF/WAVE byte buffer, averaging stereo down to mono.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is too short for a RIFF header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::MalformedHeader(format!(
            "expected RIFF magic, found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedHeader("missing WAVE form type".into()));
    }

    let mut pos = 12;
    let mut format: Option<(u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(Error::MalformedHeader(
                        "fmt chunk shorter than 16 bytes".into(),
                    ));
                }
                let code = read_u16(bytes, body);
                let channels = read_u16(bytes, body + 2);
                let rate = read_u32(bytes, body + 4);
                let bits = read_u16(bytes, body + 14);
                if code != 1 {
                    return Err(Error::UnsupportedEncoding(format!(
                        "format code {code} (only PCM = 1 is supported)"
                    )));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedEncoding(format!(
                        "{bits}-bit samples (only 16-bit is supported)"
                    )));
                }
                if channels != 1 && channels != 2 {
                    return Err(Error::UnsupportedEncoding(format!(
                        "{channels} channels (only mono or stereo is supported)"
                    )));
                }
                if rate == 0 {
                    return Err(Error::MalformedHeader("sample rate of zero".into()));
                }
                format = Some((channels, rate, bits));
            }
            b"data" => {
                let (channels, rate, _) = format.ok_or_else(|| {
                    Error::MalformedHeader("data chunk precedes fmt chunk".into())
                })?;
                let available = bytes.len() - body;
                if size > available {
                    return Err(Error::TruncatedData {
                        declared: size,
                        available,
                    });
                }
                let block = 2 * channels as usize;
                if !size.is_multiple_of(block) {
                    return Err(Error::TruncatedData {
                        declared: size,
                        available: size - size % block,
                    });
                }
                let data = &bytes[body..body + size];
                let samples = data
                    .chunks_exact(block)
                    .map(|frame| {
                        let sum: f64 = frame
                            .chunks_exact(2)
                            .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64)
                            .sum();
                        sum / channels as f64 / 32768.0
                    })
                    .collect();
                return AudioClip::new(samples, rate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(Error::MalformedHeader("no data chunk found".into()))
}

/// Quantizes a sample in `[-1, 1]` to 16-bit PCM (round to nearest, clamped).
pub fn quantize_i16(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes 16-bit mono PCM samples as a canonical 44-byte-header WAV.
pub fn encode_wav_i16(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let pcm: Vec<i16> = clip.samples.iter().map(|&s| quantize_i16(s)).collect();
    encode_wav_i16(&pcm, clip.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    parse_wav(&fs::read(path)?)
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_wav(clip))?;
    Ok(())
}

/// Linear interpolation onto a uniform grid at `target_rate`.
///
/// Output length is `floor(len * target / source)`. Positions past the last
/// source sample hold the final value.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument(
            "target rate must be positive".into(),
        ));
    }
    if clip.is_empty() {
        return Err(Error::Empty("cannot resample an empty clip"));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let n = clip.len();
    let out_len = (n as u128 * target_rate as u128 / clip.sample_rate as u128) as usize;
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let src = &clip.samples;
    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = pos.floor() as usize;
            if i + 1 >= n {
                src[n - 1]
            } else {
                let frac = pos - i as f64;
                src[i] + (src[i + 1] - src[i]) * frac
            }
        })
        .collect();
    AudioClip::new(samples, target_rate)
}

/// Resamples to [`CANONICAL_RATE`] when needed.
pub fn to_canonical(clip: &AudioClip) -> Result<AudioClip> {
    resample_linear(clip, CANONICAL_RATE)
}

/// Cuts frames at offsets `0, hop, 2*hop, ...`; a trailing partial frame is dropped.
pub fn frame_signal(clip: &AudioClip, frame_len: usize, hop: usize) -> Result<FrameStream> {
    if frame_len == 0 || hop == 0 || hop > frame_len {
        return Err(Error::InvalidArgument(format!(
            "need 0 < hop <= frame_len, got frame_len={frame_len} hop={hop}"
        )));
    }
    if frame_len > clip.len() {
        return Err(Error::InvalidArgument(format!(
            "frame length {frame_len} exceeds clip length {}",
            clip.len()
        )));
    }
    let count = 1 + (clip.len() - frame_len) / hop;
    let frames = (0..count)
        .map(|f| clip.samples[f * hop..f * hop + frame_len].to_vec())
        .collect();
    Ok(FrameStream {
        frames,
        frame_len,
        hop,
    })
}
