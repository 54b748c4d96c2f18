//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit IEEE float data.
//!
//! Samples are held as `f64`. 16-bit PCM maps `i16` to `v / 32768`.
//! Float files round-trip bit-exactly for values representable in `f32`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::waveform::MultiChannelWaveform;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV at byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
    #[error("unsupported WAV encoding at byte {offset}: {msg}")]
    Unsupported { offset: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    Pcm16,
    #[default]
    Float32,
}

fn malformed(offset: usize, msg: impl Into<String>) -> WavError {
    WavError::Malformed {
        offset,
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WavError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(malformed(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16, WavError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, WavError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    offset: usize,
}

pub fn decode_wav(bytes: &[u8]) -> Result<MultiChannelWaveform, WavError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF tag")? != b"RIFF" {
        return Err(malformed(0, "missing RIFF tag"));
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(malformed(8, "missing WAVE tag"));
    }

    let mut format: Option<Format> = None;
    loop {
        let chunk_start = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                let body_start = r.pos;
                let body = r.take(size, "fmt chunk")?;
                if size < 16 {
                    return Err(malformed(body_start, format!("fmt chunk of {size} bytes")));
                }
                let mut f = Reader { bytes: body, pos: 0 };
                let mut code = f.u16("format code")?;
                let channels = f.u16("channel count")?;
                let sample_rate = f.u32("sample rate")?;
                f.u32("byte rate")?;
                f.u16("block align")?;
                let bits = f.u16("bits per sample")?;
                if code == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(malformed(body_start, "short extensible fmt chunk"));
                    }
                    f.pos = 24;
                    code = f.u16("sub-format")?;
                }
                format = Some(Format {
                    code,
                    channels,
                    sample_rate,
                    bits,
                    offset: body_start,
                });
            }
            b"data" => {
                let fmt = format
                    .ok_or_else(|| malformed(chunk_start, "data chunk before fmt chunk"))?;
                let data_start = r.pos;
                let data = r.take(size, "data chunk")?;
                return decode_samples(&fmt, data, data_start);
            }
            _ => {
                r.take(size + (size & 1), "chunk body")?;
            }
        }
        if size & 1 == 1 && id == b"fmt " {
            r.take(1, "pad byte")?;
        }
    }
}

fn decode_samples(fmt: &Format, data: &[u8], offset: usize) -> Result<MultiChannelWaveform, WavError> {
    let channels = fmt.channels as usize;
    if channels == 0 {
        return Err(malformed(fmt.offset + 2, "zero channels"));
    }
    if fmt.sample_rate == 0 {
        return Err(malformed(fmt.offset + 4, "zero sample rate"));
    }
    let width = match (fmt.code, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (code, bits) => {
            return Err(WavError::Unsupported {
                offset: fmt.offset,
                msg: format!("format code {code} with {bits} bits per sample"),
            })
        }
    };
    let frame_bytes = width * channels;
    if data.len() % frame_bytes != 0 {
        return Err(malformed(
            offset + data.len() - data.len() % frame_bytes,
            "data chunk ends mid-frame",
        ));
    }
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(malformed(offset, "no samples"));
    }
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in data.chunks_exact(frame_bytes) {
        for (c, s) in frame.chunks_exact(width).enumerate() {
            let v = if width == 2 {
                i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0
            } else {
                f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64
            };
            out[c].push(v);
        }
    }
    MultiChannelWaveform::new(out, fmt.sample_rate).map_err(|e| malformed(offset, e.to_string()))
}

pub fn encode_wav(x: &MultiChannelWaveform, format: SampleFormat) -> Vec<u8> {
    let channels = x.num_channels();
    let (code, width) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 2usize),
        SampleFormat::Float32 => (FORMAT_FLOAT, 4usize),
    };
    let data_len = x.len() * channels * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&x.sample_rate().to_le_bytes());
    out.extend_from_slice(&(x.sample_rate() * (channels * width) as u32).to_le_bytes());
    out.extend_from_slice(&((channels * width) as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for t in 0..x.len() {
        for c in 0..channels {
            let v = x.channel(c)[t];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultiChannelWaveform, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_wav(&bytes)
}

/// Writes 32-bit float samples.
pub fn write_wav(path: impl AsRef<Path>, x: &MultiChannelWaveform) -> Result<(), WavError> {
    write_wav_as(path, x, SampleFormat::Float32)
}

pub fn write_wav_as(
    path: impl AsRef<Path>,
    x: &MultiChannelWaveform,
    format: SampleFormat,
) -> Result<(), WavError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(x, format)).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })
}
