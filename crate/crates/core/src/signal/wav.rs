//! Minimal RIFF/WAVE reader and writer: PCM16 and IEEE float32, any channel
//! count on input (downmixed by averaging), mono on output.

use std::fs;
use std::path::Path;

use super::{AudioClip, Result, SignalError};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let bytes = fs::read(path)?;
    read_wav_bytes(&bytes)
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>, format: SampleFormat) -> Result<()> {
    crate::write_atomic(path.as_ref(), &write_wav_bytes(clip, format))?;
    Ok(())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    format: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    let malformed = |msg: &str| SignalError::MalformedHeader(msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        // Tolerate a truncated final data chunk (streaming writers leave size unpatched).
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                let mut format = u16_at(body, 0);
                if format == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(malformed("extensible fmt chunk too short"));
                    }
                    format = u16_at(body, 24);
                }
                fmt = Some(FmtChunk {
                    format,
                    channels: u16_at(body, 2),
                    rate: u32_at(body, 4),
                    bits: u16_at(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start.saturating_add(size + (size & 1));
    }

    let fmt = fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("no data chunk"))?;
    if fmt.channels == 0 {
        return Err(malformed("zero channels"));
    }
    if fmt.rate == 0 {
        return Err(malformed("zero sample rate"));
    }

    let decoded: Vec<f64> = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (format, bits) => return Err(SignalError::UnsupportedCodec { format, bits }),
    };

    let channels = fmt.channels as usize;
    let frames = decoded.len() / channels;
    if frames == 0 {
        return Err(SignalError::EmptyPayload);
    }
    let samples = if channels == 1 {
        decoded
    } else {
        decoded
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioClip::new(samples, fmt.rate)
}

pub fn write_wav_bytes(clip: &AudioClip, format: SampleFormat) -> Vec<u8> {
    let (tag, bits) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 16u16),
        SampleFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block_align = bits / 8;
    let data_len = clip.len() * block_align as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    match format {
        SampleFormat::Pcm16 => {
            for &s in clip.samples() {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        SampleFormat::Float32 => {
            for &s in clip.samples() {
                out.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
    }
    out
}
